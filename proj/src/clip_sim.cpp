#include "calib/clip_sim.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace calib {

namespace {

// Encoder init scales, fixed so the tanh layer operates in its nonlinear
// range for unit-scaled token inputs.
constexpr double kW1Scale = 32.0;
constexpr double kB1Scale = 0.5;
constexpr double kW2Scale = 1.0;
constexpr double kB2Scale = 0.25;

// Template rows are drawn at a smaller scale than the unit class tokens so
// that mean pooling does not let the shared prefix drown the class
// identity; anchors then spread far enough apart for nondegenerate
// zero-shot geometry.
constexpr double kTemplateScale = 0.25;

std::vector<double> unit_gaussian(RandomStream& rng, std::size_t n) {
  std::vector<double> v = rng.gaussian_vector(n);
  double norm = l2_norm(v);
  if (norm < 1e-12) throw std::runtime_error("degenerate random vector");
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

void TaskConfig::validate() const {
  if (num_base < 2 || num_novel < 1 || embed_dim < 4)
    throw std::invalid_argument("degenerate dims");
  if (token_dim < 1 || hidden_dim < 1 || context_len < 1)
    throw std::invalid_argument("degenerate dims");
  if (shots < 1) throw std::invalid_argument("shots must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
}

FrozenEncoder FrozenEncoder::build(int token_dim, int hidden_dim, int embed_dim,
                                   std::uint64_t seed) {
  FrozenEncoder enc;
  enc.w1_ = Matrix(hidden_dim, token_dim);
  enc.w2_ = Matrix(embed_dim, hidden_dim);
  enc.b1_.resize(hidden_dim);
  enc.b2_.resize(embed_dim);

  RandomStream w1(seed, "encoder.w1"), b1(seed, "encoder.b1");
  RandomStream w2(seed, "encoder.w2"), b2(seed, "encoder.b2");
  double w1_scale = kW1Scale / std::sqrt(static_cast<double>(token_dim));
  double w2_scale = kW2Scale / std::sqrt(static_cast<double>(hidden_dim));
  for (double& v : enc.w1_.data()) v = w1_scale * w1.next_gaussian();
  for (double& v : enc.b1_) v = kB1Scale * b1.next_gaussian();
  for (double& v : enc.w2_.data()) v = w2_scale * w2.next_gaussian();
  for (double& v : enc.b2_) v = kB2Scale * b2.next_gaussian();
  return enc;
}

FrozenEncoder::Encoding FrozenEncoder::encode(const Matrix& tokens) const {
  if (tokens.cols() != static_cast<std::size_t>(token_dim()))
    throw std::invalid_argument("token width mismatch");
  if (tokens.rows() == 0) throw std::invalid_argument("empty token sequence");
  if (!tokens.all_finite()) throw std::invalid_argument("non-finite token");

  const std::size_t t = tokens.rows(), dt = tokens.cols();
  const std::size_t h = b1_.size(), d = b2_.size();

  std::vector<double> pooled(dt, 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < dt; ++c) pooled[c] += tokens(r, c);
  for (double& v : pooled) v /= static_cast<double>(t);

  Encoding enc;
  enc.num_tokens = t;
  enc.hidden.resize(h);
  for (std::size_t j = 0; j < h; ++j)
    enc.hidden[j] = std::tanh(dot(w1_.row(j), pooled) + b1_[j]);

  enc.raw.resize(d);
  for (std::size_t i = 0; i < d; ++i) enc.raw[i] = dot(w2_.row(i), enc.hidden) + b2_[i];

  double norm = l2_norm(enc.raw);
  if (norm < 1e-9) throw std::runtime_error("degenerate encoding");
  enc.inv_norm = 1.0 / norm;
  enc.embedding.resize(d);
  for (std::size_t i = 0; i < d; ++i) enc.embedding[i] = enc.raw[i] * enc.inv_norm;
  return enc;
}

Matrix FrozenEncoder::backward(const Encoding& enc, std::span<const double> upstream) const {
  const std::size_t h = b1_.size(), d = b2_.size(), dt = w1_.cols();
  if (upstream.size() != d) throw std::invalid_argument("upstream width mismatch");

  // Through normalization: d_raw = (g - out * dot(g, out)) * inv_norm.
  double g_dot_out = dot(upstream, enc.embedding);
  std::vector<double> d_raw(d);
  for (std::size_t i = 0; i < d; ++i)
    d_raw[i] = (upstream[i] - enc.embedding[i] * g_dot_out) * enc.inv_norm;

  std::vector<double> d_hidden(h, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < h; ++j) d_hidden[j] += w2_(i, j) * d_raw[i];
  for (std::size_t j = 0; j < h; ++j) d_hidden[j] *= 1.0 - enc.hidden[j] * enc.hidden[j];

  std::vector<double> d_pooled(dt, 0.0);
  for (std::size_t j = 0; j < h; ++j)
    for (std::size_t c = 0; c < dt; ++c) d_pooled[c] += w1_(j, c) * d_hidden[j];

  Matrix d_tokens(enc.num_tokens, dt);
  double inv_t = 1.0 / static_cast<double>(enc.num_tokens);
  for (std::size_t r = 0; r < enc.num_tokens; ++r)
    for (std::size_t c = 0; c < dt; ++c) d_tokens(r, c) = d_pooled[c] * inv_t;
  return d_tokens;
}

Matrix template_tokens_for(const TaskConfig& cfg, std::uint64_t seed, const std::string& name) {
  Matrix tokens(cfg.context_len, cfg.token_dim);
  for (int r = 0; r < cfg.context_len; ++r) {
    RandomStream rng(seed, "template:" + name, static_cast<std::uint64_t>(r));
    std::vector<double> row = unit_gaussian(rng, cfg.token_dim);
    for (int c = 0; c < cfg.token_dim; ++c) tokens(r, c) = kTemplateScale * row[c];
  }
  return tokens;
}

std::vector<std::string> named_templates() {
  return {"a nice image of a {}", "an example of a {}", "a picture of a {}",
          "a photo of the cool {}"};
}

std::vector<int> SyntheticTask::base_class_ids() const {
  std::vector<int> ids(cfg.num_base);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<int> SyntheticTask::novel_class_ids() const {
  std::vector<int> ids(cfg.num_novel);
  std::iota(ids.begin(), ids.end(), cfg.num_base);
  return ids;
}

SyntheticTask build_task(const TaskConfig& cfg, std::uint64_t seed) {
  cfg.validate();

  SyntheticTask task;
  task.cfg = cfg;
  task.seed = seed;
  task.encoder = FrozenEncoder::build(cfg.token_dim, cfg.hidden_dim, cfg.embed_dim, seed);
  task.template_tokens = template_tokens_for(cfg, seed, cfg.prompt_template);

  const int k = task.num_classes();
  task.class_tokens = Matrix(k, cfg.token_dim);
  for (int y = 0; y < k; ++y) {
    RandomStream rng(seed, "class_token", static_cast<std::uint64_t>(y));
    std::vector<double> row = unit_gaussian(rng, cfg.token_dim);
    for (int c = 0; c < cfg.token_dim; ++c) task.class_tokens(y, c) = row[c];
  }

  task.anchors = Matrix(k, cfg.embed_dim);
  Matrix seq(cfg.context_len + 1, cfg.token_dim);
  for (int y = 0; y < k; ++y) {
    for (int r = 0; r < cfg.context_len; ++r)
      for (int c = 0; c < cfg.token_dim; ++c) seq(r, c) = task.template_tokens(r, c);
    for (int c = 0; c < cfg.token_dim; ++c) seq(cfg.context_len, c) = task.class_tokens(y, c);
    auto enc = task.encoder.encode(seq);
    for (int c = 0; c < cfg.embed_dim; ++c) task.anchors(y, c) = enc.embedding[c];
  }

  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b)
      if (dot(task.anchors.row(a), task.anchors.row(b)) >= 0.999)
        throw std::runtime_error("degenerate task: anchors nearly collinear");
  return task;
}

PromptModel make_prompt_model(const SyntheticTask& task) {
  PromptModel model;
  model.context = task.template_tokens;
  model.task = &task;
  return model;
}

PromptModel make_prompt_model(const SyntheticTask& task, const std::string& init_template) {
  PromptModel model;
  model.context = template_tokens_for(task.cfg, task.seed, init_template);
  model.task = &task;
  return model;
}

TunedEmbeddings tuned_class_embeddings(const PromptModel& model,
                                       std::span<const int> class_ids) {
  const SyntheticTask& task = *model.task;
  const int m = task.cfg.context_len, dt = task.cfg.token_dim;

  TunedEmbeddings out;
  out.class_ids.assign(class_ids.begin(), class_ids.end());
  out.embeddings = Matrix(class_ids.size(), task.cfg.embed_dim);
  out.encodings.reserve(class_ids.size());

  Matrix seq(m + 1, dt);
  for (std::size_t row = 0; row < class_ids.size(); ++row) {
    int y = class_ids[row];
    if (y < 0 || y >= task.num_classes()) throw std::invalid_argument("class id out of range");
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < dt; ++c) seq(r, c) = model.context(r, c);
    for (int c = 0; c < dt; ++c) seq(m, c) = task.class_tokens(y, c);
    auto enc = task.encoder.encode(seq);
    for (int c = 0; c < task.cfg.embed_dim; ++c) out.embeddings(row, c) = enc.embedding[c];
    out.encodings.push_back(std::move(enc));
  }
  return out;
}

Matrix context_grad(const PromptModel& model, const TunedEmbeddings& tuned,
                    const Matrix& upstream) {
  const SyntheticTask& task = *model.task;
  const std::size_t m = static_cast<std::size_t>(task.cfg.context_len);
  if (upstream.rows() != tuned.embeddings.rows() ||
      upstream.cols() != tuned.embeddings.cols())
    throw std::invalid_argument("shape mismatch");

  Matrix grad(m, task.cfg.token_dim);
  for (std::size_t row = 0; row < upstream.rows(); ++row) {
    Matrix d_tokens = task.encoder.backward(tuned.encodings[row], upstream.row(row));
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < grad.cols(); ++c) grad(r, c) += d_tokens(r, c);
  }
  return grad;
}

ImageBatch sample_images(const SyntheticTask& task, std::span<const int> class_ids,
                         int per_class, double sigma, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("per_class must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");

  const std::size_t d = static_cast<std::size_t>(task.cfg.embed_dim);
  ImageBatch batch;
  batch.features = Matrix(class_ids.size() * per_class, d);
  batch.labels.resize(class_ids.size() * per_class);

  std::size_t row = 0;
  for (std::size_t li = 0; li < class_ids.size(); ++li) {
    int y = class_ids[li];
    if (y < 0 || y >= task.num_classes()) throw std::invalid_argument("class id out of range");
    for (int j = 0; j < per_class; ++j, ++row) {
      batch.labels[row] = static_cast<int>(li);
      if (sigma == 0.0) {
        for (std::size_t c = 0; c < d; ++c) batch.features(row, c) = task.anchors(y, c);
        continue;
      }
      std::uint64_t subkey = (static_cast<std::uint64_t>(y) << 32) |
                             static_cast<std::uint64_t>(j);
      RandomStream rng(seed, "image", subkey);
      std::vector<double> f(d);
      for (std::size_t c = 0; c < d; ++c)
        f[c] = task.anchors(y, c) + sigma * rng.next_gaussian();
      double norm = l2_norm(f);
      if (norm < 1e-12) throw std::runtime_error("degenerate image feature");
      for (std::size_t c = 0; c < d; ++c) batch.features(row, c) = f[c] / norm;
    }
  }
  return batch;
}

}  // namespace calib

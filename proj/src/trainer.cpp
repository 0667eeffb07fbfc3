#include "calib/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace calib {

namespace {

struct StepEval {
  double l_ce = 0.0, l_margin = 0.0, l_mom = 0.0, l_l1 = 0.0, l_mbls = 0.0, l_total = 0.0;
  double margin_mean = 0.0, margin_var = 0.0;
  Matrix g_total;  // context space
  GradRatioLog ratios;
};

/// dL/dembeddings from dL/dlogits for logits = tau * feats . embs^T.
Matrix logits_grad_to_embeddings(const Matrix& d_logits, const Matrix& feats, double tau) {
  Matrix d_emb(d_logits.cols(), feats.cols());
  for (std::size_t i = 0; i < d_logits.rows(); ++i)
    for (std::size_t k = 0; k < d_logits.cols(); ++k) {
      double g = tau * d_logits(i, k);
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < feats.cols(); ++c) d_emb(k, c) += g * feats(i, c);
    }
  return d_emb;
}

Matrix select_rows(const Matrix& src, std::span<const int> rows) {
  Matrix out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < src.cols(); ++c)
      out(i, c) = src(static_cast<std::size_t>(rows[i]), c);
  return out;
}

struct NormalizedRows {
  Matrix rows;
  std::vector<double> inv_norms;
};

NormalizedRows normalize_rows(const Matrix& m) {
  NormalizedRows out;
  out.rows = Matrix(m.rows(), m.cols());
  out.inv_norms.resize(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double norm = l2_norm(m.row(i));
    if (norm < 1e-12) throw std::runtime_error("degenerate embedding row");
    out.inv_norms[i] = 1.0 / norm;
    for (std::size_t c = 0; c < m.cols(); ++c) out.rows(i, c) = m(i, c) * out.inv_norms[i];
  }
  return out;
}

/// VJP of row normalization: dx = inv_norm * (g - y * dot(g, y)).
Matrix normalize_rows_backward(const NormalizedRows& n, const Matrix& upstream) {
  Matrix d(upstream.rows(), upstream.cols());
  for (std::size_t i = 0; i < upstream.rows(); ++i) {
    double gy = dot(upstream.row(i), n.rows.row(i));
    for (std::size_t c = 0; c < upstream.cols(); ++c)
      d(i, c) = n.inv_norms[i] * (upstream(i, c) - n.rows(i, c) * gy);
  }
  return d;
}

/// Scatter gradient rows for a class subset back into the full embedding
/// layout (rows aligned with tuned.class_ids; base ids are 0..K-1).
Matrix scatter_rows(const Matrix& subset_grad, std::span<const int> positions,
                    std::size_t total_rows) {
  Matrix out(total_rows, subset_grad.cols());
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t c = 0; c < subset_grad.cols(); ++c)
      out(static_cast<std::size_t>(positions[i]), c) = subset_grad(i, c);
  return out;
}

std::vector<int> moment_class_positions(const TrainConfig& cfg, int num_base, int step,
                                        bool force_full) {
  std::vector<int> positions(num_base);
  std::iota(positions.begin(), positions.end(), 0);
  if (force_full || !cfg.moment_class_subsample.has_value() ||
      *cfg.moment_class_subsample >= num_base)
    return positions;
  int m = *cfg.moment_class_subsample;
  if (m < 1) throw std::invalid_argument("moment_class_subsample must be >= 1");
  RandomStream rng(cfg.seed, "moment_subsample", static_cast<std::uint64_t>(step));
  for (int i = 0; i < m; ++i) {
    auto j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_base - i)));
    std::swap(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(j)]);
  }
  positions.resize(static_cast<std::size_t>(m));
  std::sort(positions.begin(), positions.end());
  return positions;
}

StepEval eval_step(const PromptModel& model, const SyntheticTask& task, const TrainConfig& cfg,
                   const Matrix& feats, const std::vector<int>& labels, int step,
                   bool force_full_moment) {
  const LossWeights& w = cfg.weights;
  const std::vector<int> base_ids = task.base_class_ids();
  const std::size_t k_base = base_ids.size();

  TunedEmbeddings tuned = tuned_class_embeddings(model, base_ids);
  Matrix logits = cosine_logits(feats, tuned.embeddings, w.tau);
  LabeledLogits batch{logits, labels};

  LossValueGrad ce = cross_entropy(batch);
  MarginStats mstats = margins(batch, cfg.variance_convention);
  MarginLossParts mparts = margin_loss_parts(mstats, w.alpha, w.beta);

  // Moment term over the (sub)set of base classes; positions equal class
  // ids because base classes occupy [0, num_base).
  std::vector<int> mom_pos =
      moment_class_positions(cfg, static_cast<int>(k_base), step, force_full_moment);
  Matrix tuned_mom = select_rows(tuned.embeddings, mom_pos);
  Matrix frozen_mom = select_rows(task.anchors, mom_pos);

  MomentLossParts momparts;
  Matrix g_emb_mom_mean, g_emb_mom_cov;
  if (cfg.normalize_embeddings) {
    NormalizedRows tn = normalize_rows(tuned_mom);
    NormalizedRows fn = normalize_rows(frozen_mom);
    momparts = moment_loss_parts(tn.rows, fn.rows);
    g_emb_mom_mean =
        scatter_rows(normalize_rows_backward(tn, momparts.mean_term.grad), mom_pos, k_base);
    g_emb_mom_cov =
        scatter_rows(normalize_rows_backward(tn, momparts.cov_term.grad), mom_pos, k_base);
  } else {
    momparts = moment_loss_parts(tuned_mom, frozen_mom);
    g_emb_mom_mean = scatter_rows(momparts.mean_term.grad, mom_pos, k_base);
    g_emb_mom_cov = scatter_rows(momparts.cov_term.grad, mom_pos, k_base);
  }

  StepEval ev;
  ev.l_ce = ce.value;
  ev.l_margin = mparts.mean_term.value + mparts.var_term.value;
  ev.l_mom = momparts.mean_term.value + momparts.cov_term.value;
  ev.margin_mean = mstats.mean;
  ev.margin_var = mstats.variance;

  Matrix g_ce = context_grad(model, tuned, logits_grad_to_embeddings(ce.grad, feats, w.tau));
  Matrix g_margin_mean = context_grad(
      model, tuned, logits_grad_to_embeddings(mparts.mean_term.grad, feats, w.tau));
  Matrix g_margin_var = context_grad(
      model, tuned, logits_grad_to_embeddings(mparts.var_term.grad, feats, w.tau));
  Matrix g_mom_mean = context_grad(model, tuned, g_emb_mom_mean);
  Matrix g_mom_cov = context_grad(model, tuned, g_emb_mom_cov);

  ComponentGrads comps;
  comps.ce = g_ce;
  comps.margin_mean = g_margin_mean;
  comps.margin_var = g_margin_var;
  comps.mom_mean = g_mom_mean;
  comps.mom_cov = g_mom_cov;
  comps.lambda_mom = w.lambda_mom;
  ev.ratios = grad_ratios(comps);

  ev.g_total = g_ce;
  add_scaled(ev.g_total, w.lambda_margin, g_margin_mean);
  add_scaled(ev.g_total, w.lambda_margin, g_margin_var);
  add_scaled(ev.g_total, w.lambda_mom, g_mom_mean);
  add_scaled(ev.g_total, w.lambda_mom, g_mom_cov);
  ev.l_total = ev.l_ce + w.lambda_margin * ev.l_margin + w.lambda_mom * ev.l_mom;

  if (w.lambda_l1 > 0.0) {
    LossValueGrad l1 = l1_align_loss(tuned_mom, frozen_mom);
    ev.l_l1 = l1.value;
    Matrix g_l1 = context_grad(model, tuned, scatter_rows(l1.grad, mom_pos, k_base));
    add_scaled(ev.g_total, w.lambda_l1, g_l1);
    ev.l_total += w.lambda_l1 * ev.l_l1;
  }
  if (w.mbls_weight > 0.0) {
    LossValueGrad mbls = mbls_loss(logits, w.mbls_cap, w.mbls_weight);
    ev.l_mbls = mbls.value;
    Matrix g_mbls =
        context_grad(model, tuned, logits_grad_to_embeddings(mbls.grad, feats, w.tau));
    add_scaled(ev.g_total, 1.0, g_mbls);
    ev.l_total += ev.l_mbls;
  }
  return ev;
}

ImageBatch training_images(const SyntheticTask& task, const TrainConfig& cfg) {
  return sample_images(task, task.base_class_ids(), task.cfg.shots, task.cfg.sigma,
                       derive_seed(cfg.seed, "train_images"));
}

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (moment_class_subsample.has_value() && *moment_class_subsample < 1)
    throw std::invalid_argument("moment_class_subsample must be >= 1");
}

std::string split_name(Split s) { return s == Split::base ? "base" : "novel"; }

TrainLog train(PromptModel& model, const SyntheticTask& task, const TrainConfig& cfg) {
  cfg.validate();
  if (model.task != &task) throw std::invalid_argument("model not bound to task");

  ImageBatch data = training_images(task, cfg);
  const std::size_t n = data.features.rows();

  TrainLog log;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    RandomStream shuffle(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n - 1; i > 0; --i) {
      std::size_t j = shuffle.next_below(i + 1);
      std::swap(perm[i], perm[j]);
    }

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      Matrix feats(end - start, data.features.cols());
      std::vector<int> labels(end - start);
      for (std::size_t i = start; i < end; ++i) {
        std::size_t src = perm[i];
        for (std::size_t c = 0; c < feats.cols(); ++c)
          feats(i - start, c) = data.features(src, c);
        labels[i - start] = data.labels[src];
      }

      StepEval ev = eval_step(model, task, cfg, feats, labels, step, false);
      if (!std::isfinite(ev.l_total) || !ev.g_total.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << ": l_ce=" << ev.l_ce
            << " l_margin=" << ev.l_margin << " l_mom=" << ev.l_mom;
        throw std::runtime_error(msg.str());
      }

      StepRecord rec;
      rec.step = step;
      rec.l_ce = ev.l_ce;
      rec.l_margin = ev.l_margin;
      rec.l_mom = ev.l_mom;
      rec.l_total = ev.l_total;
      rec.margin_mean = ev.margin_mean;
      rec.margin_var = ev.margin_var;
      rec.grad_ratios = ev.ratios;
      log.steps.push_back(rec);

      add_scaled(model.context, -cfg.lr, ev.g_total);
      ++step;
    }
  }

  log.total_steps = step;
  if (!log.steps.empty()) {
    const StepRecord& last = log.steps.back();
    log.final_l_total = last.l_total;
    log.final_l_ce = last.l_ce;
    log.final_l_margin = last.l_margin;
    log.final_l_mom = last.l_mom;
  }
  return log;
}

ObjectiveEval full_batch_objective(const PromptModel& model, const SyntheticTask& task,
                                   const TrainConfig& cfg) {
  cfg.validate();
  ImageBatch data = training_images(task, cfg);
  StepEval ev = eval_step(model, task, cfg, data.features, data.labels, 0, true);
  ObjectiveEval out;
  out.value = ev.l_total;
  out.context_grad = ev.g_total;
  out.l_ce = ev.l_ce;
  out.l_margin = ev.l_margin;
  out.l_mom = ev.l_mom;
  return out;
}

double grad_rel_error(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(const PromptModel& model, const SyntheticTask& task,
                               const TrainConfig& cfg, double h) {
  if (h < 1e-7 || h > 1e-3) throw std::invalid_argument("h must lie in [1e-7, 1e-3]");

  ObjectiveEval base = full_batch_objective(model, task, cfg);

  GradCheckReport rep;
  rep.num_params = model.context.data().size();
  double total = 0.0;
  PromptModel probe = model;
  for (std::size_t i = 0; i < probe.context.data().size(); ++i) {
    double saved = probe.context.data()[i];
    probe.context.data()[i] = saved + h;
    double f_plus = full_batch_objective(probe, task, cfg).value;
    probe.context.data()[i] = saved - h;
    double f_minus = full_batch_objective(probe, task, cfg).value;
    probe.context.data()[i] = saved;

    double numeric = (f_plus - f_minus) / (2.0 * h);
    double rel = grad_rel_error(base.context_grad.data()[i], numeric);
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    total += rel;
  }
  rep.mean_rel_error = total / static_cast<double>(rep.num_params);
  return rep;
}

EvalResult evaluate(const PromptModel& model, const SyntheticTask& task, Split split,
                    int per_class, std::uint64_t seed, double tau,
                    const BinningConfig& binning) {
  std::vector<int> ids =
      split == Split::base ? task.base_class_ids() : task.novel_class_ids();
  if (ids.empty()) throw std::invalid_argument("empty split");

  ImageBatch images = sample_images(task, ids, per_class, task.cfg.sigma, seed);
  TunedEmbeddings tuned = tuned_class_embeddings(model, ids);
  Matrix logits = cosine_logits(images.features, tuned.embeddings, tau);
  LabeledLogits ll{logits, images.labels};

  EvalResult res;
  res.report = compute_report(ll, binning);
  res.margin_stats = margins(ll);
  res.logits = ll;
  res.tuned_embeddings = tuned.embeddings;
  res.frozen_embeddings = select_rows(task.anchors, ids);

  MomentLossParts drift = moment_loss_parts(res.tuned_embeddings, res.frozen_embeddings);
  res.mean_drift = drift.mean_term.value;
  res.cov_drift = drift.cov_term.value;
  return res;
}

}  // namespace calib

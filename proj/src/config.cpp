#include "calib/config.hpp"

#include <cstdio>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace calib {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& known) {
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key))
      throw std::invalid_argument("unknown config key: " + section + key);
  }
}

double get_real(const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw std::invalid_argument("config key " + key + " must be a number");
  return obj[key].get<double>();
}

int get_int(const json& obj, const std::string& key, int fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer())
    throw std::invalid_argument("config key " + key + " must be an integer");
  return obj[key].get<int>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) throw std::invalid_argument("config key " + key + " must be a string");
  return obj[key].get<std::string>();
}

bool get_bool(const json& obj, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) throw std::invalid_argument("config key " + key + " must be a boolean");
  return obj[key].get<bool>();
}

}  // namespace

std::string variance_convention_name(VarianceConvention c) {
  return c == VarianceConvention::population ? "population" : "sample";
}

std::string bin_scheme_name(BinScheme s) {
  return s == BinScheme::equal_width ? "equal_width" : "equal_mass";
}

BinScheme parse_bin_scheme(const std::string& s) {
  if (s == "equal_width") return BinScheme::equal_width;
  if (s == "equal_mass") return BinScheme::equal_mass;
  throw std::invalid_argument("unknown binning scheme: " + s);
}

std::vector<std::uint64_t> RunConfig::resolved_seeds() const {
  if (!experiment.seeds.empty()) return experiment.seeds;
  std::vector<std::uint64_t> out;
  out.reserve(static_cast<std::size_t>(experiment.num_seeds));
  for (int i = 0; i < experiment.num_seeds; ++i) out.push_back(seed + static_cast<std::uint64_t>(i));
  return out;
}

void RunConfig::validate() const {
  task.validate();
  train.validate();
  if (metrics.num_bins < 1) throw std::invalid_argument("metrics.num_bins must be >= 1");
  if (experiment.num_seeds < 1) throw std::invalid_argument("experiment.num_seeds must be >= 1");
  if (experiment.eval_per_class < 1)
    throw std::invalid_argument("experiment.eval_per_class must be >= 1");
  if (experiment.shots_grid.empty()) throw std::invalid_argument("experiment.shots_grid empty");
  if (experiment.templates.empty()) throw std::invalid_argument("experiment.templates empty");
}

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument("config root must be an object");
  reject_unknown_keys(root, "", {"seed", "task", "train", "metrics", "experiment"});

  RunConfig cfg;
  if (root.contains("seed")) {
    if (!root["seed"].is_number_integer() || root["seed"].get<long long>() < 0)
      throw std::invalid_argument("config key seed must be a nonnegative integer");
    cfg.seed = root["seed"].get<std::uint64_t>();
  }

  if (root.contains("task")) {
    const json& t = root["task"];
    reject_unknown_keys(t, "task.",
                        {"num_base", "num_novel", "token_dim", "hidden_dim", "embed_dim",
                         "context_len", "shots", "sigma", "prompt_template"});
    cfg.task.num_base = get_int(t, "num_base", cfg.task.num_base);
    cfg.task.num_novel = get_int(t, "num_novel", cfg.task.num_novel);
    cfg.task.token_dim = get_int(t, "token_dim", cfg.task.token_dim);
    cfg.task.hidden_dim = get_int(t, "hidden_dim", cfg.task.hidden_dim);
    cfg.task.embed_dim = get_int(t, "embed_dim", cfg.task.embed_dim);
    cfg.task.context_len = get_int(t, "context_len", cfg.task.context_len);
    cfg.task.shots = get_int(t, "shots", cfg.task.shots);
    cfg.task.sigma = get_real(t, "sigma", cfg.task.sigma);
    cfg.task.prompt_template = get_string(t, "prompt_template", cfg.task.prompt_template);
  }

  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown_keys(
        t, "train.",
        {"alpha", "beta", "lambda_margin", "lambda_mom", "tau", "lambda_l1", "mbls_weight",
         "mbls_cap", "lr", "batch_size", "epochs", "variance_convention",
         "moment_class_subsample", "normalize_embeddings"});
    LossWeights& w = cfg.train.weights;
    w.alpha = get_real(t, "alpha", w.alpha);
    w.beta = get_real(t, "beta", w.beta);
    w.lambda_margin = get_real(t, "lambda_margin", w.lambda_margin);
    w.lambda_mom = get_real(t, "lambda_mom", w.lambda_mom);
    w.tau = get_real(t, "tau", w.tau);
    w.lambda_l1 = get_real(t, "lambda_l1", w.lambda_l1);
    w.mbls_weight = get_real(t, "mbls_weight", w.mbls_weight);
    w.mbls_cap = get_real(t, "mbls_cap", w.mbls_cap);
    cfg.train.lr = get_real(t, "lr", cfg.train.lr);
    cfg.train.batch_size = get_int(t, "batch_size", cfg.train.batch_size);
    cfg.train.epochs = get_int(t, "epochs", cfg.train.epochs);
    std::string conv = get_string(t, "variance_convention", "population");
    if (conv == "population") {
      cfg.train.variance_convention = VarianceConvention::population;
    } else if (conv == "sample") {
      cfg.train.variance_convention = VarianceConvention::sample;
    } else {
      throw std::invalid_argument("unknown variance_convention: " + conv);
    }
    if (t.contains("moment_class_subsample")) {
      if (t["moment_class_subsample"].is_null()) {
        cfg.train.moment_class_subsample.reset();
      } else {
        cfg.train.moment_class_subsample = get_int(t, "moment_class_subsample", 0);
      }
    }
    cfg.train.normalize_embeddings =
        get_bool(t, "normalize_embeddings", cfg.train.normalize_embeddings);
  }

  if (root.contains("metrics")) {
    const json& m = root["metrics"];
    reject_unknown_keys(m, "metrics.", {"num_bins", "scheme"});
    cfg.metrics.num_bins = get_int(m, "num_bins", cfg.metrics.num_bins);
    cfg.metrics.scheme = parse_bin_scheme(get_string(m, "scheme", "equal_width"));
  }

  if (root.contains("experiment")) {
    const json& e = root["experiment"];
    reject_unknown_keys(
        e, "experiment.",
        {"shots_grid", "templates", "seeds", "num_seeds", "eval_per_class", "sigma_grid"});
    if (e.contains("shots_grid")) {
      cfg.experiment.shots_grid.clear();
      for (const auto& v : e["shots_grid"]) cfg.experiment.shots_grid.push_back(v.get<int>());
    }
    if (e.contains("templates")) {
      cfg.experiment.templates.clear();
      for (const auto& v : e["templates"])
        cfg.experiment.templates.push_back(v.get<std::string>());
    }
    if (e.contains("seeds")) {
      cfg.experiment.seeds.clear();
      for (const auto& v : e["seeds"]) cfg.experiment.seeds.push_back(v.get<std::uint64_t>());
    }
    cfg.experiment.num_seeds = get_int(e, "num_seeds", cfg.experiment.num_seeds);
    cfg.experiment.eval_per_class = get_int(e, "eval_per_class", cfg.experiment.eval_per_class);
    if (e.contains("sigma_grid")) {
      cfg.experiment.sigma_grid.clear();
      for (const auto& v : e["sigma_grid"])
        cfg.experiment.sigma_grid.push_back(v.get<double>());
    }
  }

  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path));
}

JsonValue config_to_json(const RunConfig& cfg) {
  JsonValue root = JsonValue::object();
  root.set("seed", JsonValue::integer(static_cast<long long>(cfg.seed)));

  JsonValue task = JsonValue::object();
  task.set("num_base", JsonValue::integer(cfg.task.num_base));
  task.set("num_novel", JsonValue::integer(cfg.task.num_novel));
  task.set("token_dim", JsonValue::integer(cfg.task.token_dim));
  task.set("hidden_dim", JsonValue::integer(cfg.task.hidden_dim));
  task.set("embed_dim", JsonValue::integer(cfg.task.embed_dim));
  task.set("context_len", JsonValue::integer(cfg.task.context_len));
  task.set("shots", JsonValue::integer(cfg.task.shots));
  task.set("sigma", JsonValue::number(cfg.task.sigma));
  task.set("prompt_template", JsonValue::string(cfg.task.prompt_template));
  root.set("task", std::move(task));

  JsonValue train = JsonValue::object();
  const LossWeights& w = cfg.train.weights;
  train.set("alpha", JsonValue::number(w.alpha));
  train.set("beta", JsonValue::number(w.beta));
  train.set("lambda_margin", JsonValue::number(w.lambda_margin));
  train.set("lambda_mom", JsonValue::number(w.lambda_mom));
  train.set("tau", JsonValue::number(w.tau));
  train.set("lambda_l1", JsonValue::number(w.lambda_l1));
  train.set("mbls_weight", JsonValue::number(w.mbls_weight));
  train.set("mbls_cap", JsonValue::number(w.mbls_cap));
  train.set("lr", JsonValue::number(cfg.train.lr));
  train.set("batch_size", JsonValue::integer(cfg.train.batch_size));
  train.set("epochs", JsonValue::integer(cfg.train.epochs));
  train.set("variance_convention",
            JsonValue::string(variance_convention_name(cfg.train.variance_convention)));
  train.set("moment_class_subsample",
            cfg.train.moment_class_subsample.has_value()
                ? JsonValue::integer(*cfg.train.moment_class_subsample)
                : JsonValue::null());
  train.set("normalize_embeddings", JsonValue::boolean(cfg.train.normalize_embeddings));
  root.set("train", std::move(train));

  JsonValue metrics = JsonValue::object();
  metrics.set("num_bins", JsonValue::integer(cfg.metrics.num_bins));
  metrics.set("scheme", JsonValue::string(bin_scheme_name(cfg.metrics.scheme)));
  root.set("metrics", std::move(metrics));

  JsonValue experiment = JsonValue::object();
  JsonValue shots = JsonValue::array();
  for (int s : cfg.experiment.shots_grid) shots.push(JsonValue::integer(s));
  experiment.set("shots_grid", std::move(shots));
  JsonValue templates = JsonValue::array();
  for (const std::string& t : cfg.experiment.templates) templates.push(JsonValue::string(t));
  experiment.set("templates", std::move(templates));
  JsonValue seeds = JsonValue::array();
  for (std::uint64_t s : cfg.experiment.seeds)
    seeds.push(JsonValue::integer(static_cast<long long>(s)));
  experiment.set("seeds", std::move(seeds));
  experiment.set("num_seeds", JsonValue::integer(cfg.experiment.num_seeds));
  experiment.set("eval_per_class", JsonValue::integer(cfg.experiment.eval_per_class));
  JsonValue sigmas = JsonValue::array();
  for (double s : cfg.experiment.sigma_grid) sigmas.push(JsonValue::number(s));
  experiment.set("sigma_grid", std::move(sigmas));
  root.set("experiment", std::move(experiment));
  return root;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = fnv1a64(config_to_json(cfg).dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace calib

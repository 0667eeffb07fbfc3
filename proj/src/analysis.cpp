#include "calib/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace calib {

namespace {

double median_of(std::vector<double> values) { return quantile_type7(values, 0.5); }

struct RunMetrics {
  double acc_base, ece_base, acc_novel, ece_novel;
};

RunMetrics run_one(const TaskConfig& task_cfg, const TrainConfig& base_train,
                   const LossWeights& weights, std::uint64_t seed,
                   const std::string& init_template, const SweepSettings& settings) {
  SyntheticTask task = build_task(task_cfg, seed);
  PromptModel model = init_template.empty() ? make_prompt_model(task)
                                            : make_prompt_model(task, init_template);
  TrainConfig cfg = base_train;
  cfg.weights = weights;
  cfg.seed = seed;
  train(model, task, cfg);

  std::uint64_t eval_seed = derive_seed(seed, "eval");
  EvalResult base_eval = evaluate(model, task, Split::base, settings.eval_per_class, eval_seed,
                                  weights.tau, settings.binning);
  EvalResult novel_eval = evaluate(model, task, Split::novel, settings.eval_per_class,
                                   eval_seed, weights.tau, settings.binning);
  return {base_eval.report.accuracy, base_eval.report.ece, novel_eval.report.accuracy,
          novel_eval.report.ece};
}

struct MethodSpec {
  std::string name;
  LossWeights weights;
};

SweepResult run_grid(const std::string& kind, const TrainConfig& train_cfg,
                     const std::vector<std::pair<std::string, TaskConfig>>& axis_points,
                     const std::vector<MethodSpec>& methods,
                     std::span<const std::uint64_t> seeds, const SweepSettings& settings,
                     const std::string& init_template = "") {
  SweepResult result;
  result.kind = kind;
  for (const auto& [axis, point_cfg] : axis_points) {
    for (const MethodSpec& method : methods) {
      std::vector<double> ab, eb, an, en;
      for (std::uint64_t seed : seeds) {
        std::string init = init_template;
        if (kind == "init") init = axis;  // the axis itself is the initialization
        RunMetrics m = run_one(point_cfg, train_cfg, method.weights, seed, init, settings);
        result.records.push_back(
            {axis, seed, method.name, m.acc_base, m.ece_base, m.acc_novel, m.ece_novel});
        ab.push_back(m.acc_base);
        eb.push_back(m.ece_base);
        an.push_back(m.acc_novel);
        en.push_back(m.ece_novel);
      }
      result.medians.push_back({axis, method.name, median_of(ab), median_of(eb),
                                median_of(an), median_of(en)});
    }
  }
  return result;
}

}  // namespace

EcdfSeries margin_ecdf(std::span<const double> margins) {
  if (margins.empty()) throw std::invalid_argument("no samples");
  EcdfSeries s;
  s.values.assign(margins.begin(), margins.end());
  std::sort(s.values.begin(), s.values.end());
  s.fractions.resize(s.values.size());
  for (std::size_t i = 0; i < s.values.size(); ++i)
    s.fractions[i] = static_cast<double>(i + 1) / static_cast<double>(s.values.size());
  return s;
}

double quantile_type7(std::span<const double> values, double p) {
  if (values.empty()) throw std::invalid_argument("no samples");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("p must lie in [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - std::floor(h)) * (sorted[lo + 1] - sorted[lo]);
}

BoxStats box_stats(std::span<const double> values) {
  BoxStats b;
  b.median = quantile_type7(values, 0.5);
  b.q1 = quantile_type7(values, 0.25);
  b.q3 = quantile_type7(values, 0.75);
  b.iqr = b.q3 - b.q1;
  return b;
}

std::vector<std::size_t> error_confidence_histogram(const Matrix& probs,
                                                    std::span<const int> labels,
                                                    int num_bins) {
  if (num_bins < 1) throw std::invalid_argument("num_bins must be >= 1");
  if (probs.rows() == 0) throw std::invalid_argument("no samples");
  std::vector<int> pred = predict_top1(probs);
  std::vector<double> conf = top1_confidence(probs);
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_bins), 0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    if (pred[i] == labels[i]) continue;
    int b = static_cast<int>(std::ceil(conf[i] * num_bins)) - 1;
    counts[static_cast<std::size_t>(std::clamp(b, 0, num_bins - 1))]++;
  }
  return counts;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("length mismatch");
  if (xs.size() < 3) throw std::invalid_argument("need at least 3 points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("degenerate correlation");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> xs, std::span<const double> ys) {
  std::vector<double> rx = ranks(xs), ry = ranks(ys);
  return pearson(rx, ry);
}

double variability_ece_correlation(std::span<const RunPoint> runs, bool use_spearman) {
  std::vector<double> xs, ys;
  xs.reserve(runs.size());
  ys.reserve(runs.size());
  for (const RunPoint& r : runs) {
    xs.push_back(r.margin_variance);
    ys.push_back(r.ece);
  }
  return use_spearman ? spearman(xs, ys) : pearson(xs, ys);
}

std::vector<std::string> ablation_variants() {
  return {"ce", "ce+margin", "ce+margin+l1", "ce+margin+mom"};
}

LossWeights ablation_weights(const LossWeights& base, const std::string& variant) {
  LossWeights w = base;
  w.lambda_l1 = 0.0;
  w.mbls_weight = 0.0;
  if (variant == "ce") {
    w.lambda_margin = 0.0;
    w.lambda_mom = 0.0;
  } else if (variant == "ce+margin") {
    w.lambda_mom = 0.0;
  } else if (variant == "ce+margin+l1") {
    w.lambda_mom = 0.0;
    w.lambda_l1 = base.lambda_l1 > 0.0 ? base.lambda_l1 : 1.0;
  } else if (variant == "ce+margin+mom") {
    // base weights as configured
  } else {
    throw std::invalid_argument("unknown ablation variant: " + variant);
  }
  return w;
}

SweepResult shots_sweep(const TaskConfig& task_cfg, const TrainConfig& train_cfg,
                        std::span<const int> shots_grid, std::span<const std::uint64_t> seeds,
                        const SweepSettings& settings) {
  LossWeights full = train_cfg.weights;
  std::vector<MethodSpec> methods = {{"ce", ablation_weights(full, "ce")}, {"full", full}};
  std::vector<std::pair<std::string, TaskConfig>> points;
  for (int s : shots_grid) {
    TaskConfig cfg = task_cfg;
    cfg.shots = s;
    points.emplace_back(std::to_string(s), cfg);
  }
  return run_grid("shots", train_cfg, points, methods, seeds, settings);
}

SweepResult init_robustness_sweep(const TaskConfig& task_cfg, const TrainConfig& train_cfg,
                                  std::span<const std::string> templates,
                                  std::span<const std::uint64_t> seeds,
                                  const SweepSettings& settings) {
  LossWeights full = train_cfg.weights;
  std::vector<MethodSpec> methods = {{"ce", ablation_weights(full, "ce")}, {"full", full}};
  std::vector<std::pair<std::string, TaskConfig>> points;
  for (const std::string& t : templates) points.emplace_back(t, task_cfg);
  return run_grid("init", train_cfg, points, methods, seeds, settings);
}

SweepResult ablation_suite(const TaskConfig& task_cfg, const TrainConfig& train_cfg,
                           std::span<const std::uint64_t> seeds,
                           const SweepSettings& settings) {
  std::vector<std::pair<std::string, TaskConfig>> points = {{"default", task_cfg}};
  SweepResult result;
  result.kind = "ablation";
  for (const std::string& variant : ablation_variants()) {
    std::vector<MethodSpec> methods = {{variant, ablation_weights(train_cfg.weights, variant)}};
    SweepResult part =
        run_grid("ablation", train_cfg, points, methods, seeds, settings);
    for (auto& r : part.records) {
      r.axis = variant;
      result.records.push_back(r);
    }
    for (auto& m : part.medians) {
      m.axis = variant;
      result.medians.push_back(m);
    }
  }
  return result;
}

}  // namespace calib

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calib/clip_sim.hpp"
#include "calib/matrix.hpp"
#include "calib/metrics.hpp"
#include "calib/trainer.hpp"

namespace calib {

struct EcdfSeries {
  std::vector<double> values;     // sorted ascending
  std::vector<double> fractions;  // (i+1)/n, ending at 1
};

struct BoxStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
};

EcdfSeries margin_ecdf(std::span<const double> margins);

/// Linear-interpolation (type-7) quantile of an unsorted sample.
double quantile_type7(std::span<const double> values, double p);
BoxStats box_stats(std::span<const double> values);

/// Misclassified-sample counts per equal-width confidence bin.
std::vector<std::size_t> error_confidence_histogram(const Matrix& probs,
                                                    std::span<const int> labels, int num_bins);

struct RunPoint {
  double margin_variance = 0.0;
  double ece = 0.0;
};

double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation between per-run margin variance and ECE; needs at
/// least 3 runs and nonzero variance on both coordinates.
double variability_ece_correlation(std::span<const RunPoint> runs, bool use_spearman = false);

struct SweepRecord {
  std::string axis;  // shot count, template name, or ablation variant
  std::uint64_t seed = 0;
  std::string method;
  double acc_base = 0.0, ece_base = 0.0;
  double acc_novel = 0.0, ece_novel = 0.0;
};

struct SweepMedian {
  std::string axis;
  std::string method;
  double acc_base = 0.0, ece_base = 0.0;
  double acc_novel = 0.0, ece_novel = 0.0;
};

struct SweepResult {
  std::string kind;
  std::vector<SweepRecord> records;   // ordered by (axis, method, seed)
  std::vector<SweepMedian> medians;   // ordered by (axis, method)
};

struct SweepSettings {
  int eval_per_class = 200;
  BinningConfig binning;
};

/// Train CE-only and the full objective per (shots, seed), from scratch at
/// every grid point, and aggregate per-split medians.
SweepResult shots_sweep(const TaskConfig& task_cfg, const TrainConfig& train_cfg,
                        std::span<const int> shots_grid, std::span<const std::uint64_t> seeds,
                        const SweepSettings& settings = {});

/// Same grid over the named prompt-template initializations.
SweepResult init_robustness_sweep(const TaskConfig& task_cfg, const TrainConfig& train_cfg,
                                  std::span<const std::string> templates,
                                  std::span<const std::uint64_t> seeds,
                                  const SweepSettings& settings = {});

/// Fixed, ordered loss-component ablation:
/// ce, ce+margin, ce+margin+l1, ce+margin+mom.
std::vector<std::string> ablation_variants();
SweepResult ablation_suite(const TaskConfig& task_cfg, const TrainConfig& train_cfg,
                           std::span<const std::uint64_t> seeds,
                           const SweepSettings& settings = {});

/// Weight configuration of one ablation variant, derived from the base
/// config (unknown names throw).
LossWeights ablation_weights(const LossWeights& base, const std::string& variant);

}  // namespace calib

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calib/clip_sim.hpp"
#include "calib/losses.hpp"
#include "calib/metrics.hpp"

namespace calib {

struct TrainConfig {
  LossWeights weights;
  double lr = 0.005;
  int batch_size = 8;
  int epochs = 50;
  std::uint64_t seed = 0;
  VarianceConvention variance_convention = VarianceConvention::population;
  std::optional<int> moment_class_subsample;  // absent: all base classes each step
  bool normalize_embeddings = true;           // L2-normalize rows before moments

  void validate() const;
};

struct StepRecord {
  int step = 0;
  double l_ce = 0.0;
  double l_margin = 0.0;
  double l_mom = 0.0;
  double l_total = 0.0;
  double margin_mean = 0.0;
  double margin_var = 0.0;
  GradRatioLog grad_ratios;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  int total_steps = 0;
  double final_l_total = 0.0;
  double final_l_ce = 0.0;
  double final_l_margin = 0.0;
  double final_l_mom = 0.0;
};

/// Plain gradient descent on the context tokens with the combined
/// objective. Mini-batches are drawn without replacement per epoch from a
/// seeded stream; the moment loss sees the (sub)set of base-class
/// embeddings every step. Aborts with step index and component values if
/// any loss turns non-finite.
TrainLog train(PromptModel& model, const SyntheticTask& task, const TrainConfig& cfg);

/// The full-batch objective (all few-shot images, all base classes in the
/// moment term) and its analytic context gradient, as used by
/// gradient_check and the verification tests.
struct ObjectiveEval {
  double value = 0.0;
  Matrix context_grad;
  double l_ce = 0.0, l_margin = 0.0, l_mom = 0.0;
};
ObjectiveEval full_batch_objective(const PromptModel& model, const SyntheticTask& task,
                                   const TrainConfig& cfg);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t num_params = 0;
};

/// Central finite differences of the full-batch objective against the
/// analytic context gradient, entry by entry. h must lie in [1e-7, 1e-3].
GradCheckReport gradient_check(const PromptModel& model, const SyntheticTask& task,
                               const TrainConfig& cfg, double h);

/// Relative error convention shared by gradient_check and the test suite:
/// |a - n| / max(|a|, |n|, 1e-3).
double grad_rel_error(double analytic, double numeric);

enum class Split { base, novel };
std::string split_name(Split s);

struct EvalResult {
  CalibrationReport report;
  MarginStats margin_stats;
  double mean_drift = 0.0;  // |mu_t - mu_f|^2 over the split's classes
  double cov_drift = 0.0;   // |Sigma_t - Sigma_f|_F^2
  LabeledLogits logits;     // labels are local indices into the split's class list
  Matrix tuned_embeddings;
  Matrix frozen_embeddings;
};

/// Fresh seeded draws of `per_class` images per split class, scored with
/// the tuned embeddings of that split.
EvalResult evaluate(const PromptModel& model, const SyntheticTask& task, Split split,
                    int per_class, std::uint64_t seed, double tau = 30.0,
                    const BinningConfig& binning = {});

}  // namespace calib

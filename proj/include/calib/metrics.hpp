#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calib/matrix.hpp"

namespace calib {

/// Pre-softmax scores with ground-truth labels; the substrate of all
/// metrics and losses.
struct LabeledLogits {
  Matrix logits;            // N x K
  std::vector<int> labels;  // length N, values in [0, K)

  std::size_t num_samples() const { return logits.rows(); }
  std::size_t num_classes() const { return logits.cols(); }

  /// Throws std::invalid_argument on shape/label/finiteness violations.
  void validate() const;
};

enum class BinScheme { equal_width, equal_mass };

struct BinningConfig {
  int num_bins = 15;
  BinScheme scheme = BinScheme::equal_width;
};

/// One confidence bin of a reliability diagram. Empty bins carry no
/// statistics (absent, never 0-by-convention).
struct BinStat {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;
  std::optional<double> accuracy;
};

struct CalibrationReport {
  double ece = 0.0;
  double mce = 0.0;
  double ace = 0.0;
  double nll = 0.0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  std::vector<BinStat> bins;
};

/// Row-wise exp-normalize with per-row max subtraction. Temperature, when
/// wanted, is applied by the caller before the call.
Matrix softmax(const Matrix& logits);

/// Top-1 predictions; argmax ties broken toward the lowest class index.
std::vector<int> predict_top1(const Matrix& probs);

/// Top-1 confidences p_hat[i] = max_j probs(i, j).
std::vector<double> top1_confidence(const Matrix& probs);

std::vector<BinStat> reliability_bins(const Matrix& probs, std::span<const int> labels,
                                      const BinningConfig& cfg);

double ece(std::span<const BinStat> bins, std::size_t total);
double mce(std::span<const BinStat> bins, std::size_t total);

/// Adaptive calibration error: the ECE gap formula over equal-mass bins.
double ace(const Matrix& probs, std::span<const int> labels, int num_bins);

/// Mean negative log-likelihood of the true class; probabilities are
/// clamped at 1e-300 before the log.
double nll(const Matrix& probs, std::span<const int> labels);

struct TemperatureFit {
  double temperature = 1.0;
  bool boundary = false;   // search ended pinned to a bound of ln T in [-5, 5]
  double nll_at_one = 0.0;
  double nll_at_fit = 0.0;
};

/// Golden-section search for the T minimizing validation NLL of
/// softmax(logits / T), over ln T in [-5, 5], 200 iterations.
TemperatureFit fit_temperature(const LabeledLogits& val);

/// Full metric bundle over one logits set. ECE/MCE come from the
/// configured binning; ACE always uses equal-mass bins with the same count.
CalibrationReport compute_report(const LabeledLogits& in, const BinningConfig& cfg = {});

}  // namespace calib

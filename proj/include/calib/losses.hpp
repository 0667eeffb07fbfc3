#pragma once

#include <span>
#include <vector>

#include "calib/matrix.hpp"
#include "calib/metrics.hpp"

namespace calib {

enum class VarianceConvention { population, sample };

/// Weights of the combined training objective
///   L = L_ce + lambda_margin * L_margin + lambda_mom * L_mom
/// plus the optional baseline terms (l1 alignment, MBLS) used by ablations.
struct LossWeights {
  double alpha = 0.1;          // margin-mean weight
  double beta = 0.01;          // margin-variance weight
  double lambda_margin = 1.0;
  double lambda_mom = 5.0;
  double tau = 30.0;           // softmax temperature on cosine logits
  double lambda_l1 = 0.0;      // l1-alignment baseline weight (ablation)
  double mbls_weight = 0.0;    // MBLS baseline weight (off by default)
  double mbls_cap = 10.0;

  void validate() const;
};

/// A loss value together with its analytic gradient. The gradient has the
/// shape of whatever was differentiated (a logits matrix, an embedding
/// matrix, or the prompt context) and never aliases the inputs.
struct LossValueGrad {
  double value = 0.0;
  Matrix grad;
};

/// Per-sample logit margins m_i = z[i, y_i] - max_{j != y_i} z[i, j],
/// with batch mean and variance. The competitor index selected for each
/// sample (ties to the lowest index) is recorded for subgradient routing.
struct MarginStats {
  std::vector<double> margins;
  double mean = 0.0;
  double variance = 0.0;
  VarianceConvention convention = VarianceConvention::population;
  std::vector<int> true_class;
  std::vector<int> competitor;
  std::size_t num_classes = 0;
};

/// Mean vector and covariance matrix of a set of row embeddings,
/// population-normalized (divide by the row count).
struct MomentSummary {
  std::vector<double> mean;  // d
  Matrix covariance;         // d x d
};

/// Gradient-norm ratio diagnostics; every ratio is
/// numerator_norm / (denominator_norm + epsilon).
struct GradRatioLog {
  double rho_margin = 0.0;           // |grad L_mean| / (|grad L_var| + eps)
  double rho_mom = 0.0;              // |grad lam*L_mu| / (|grad lam*L_sigma| + eps)
  double rho_mom_over_margin = 0.0;
  double rho_margin_over_ce = 0.0;
  double rho_mom_over_ce = 0.0;
  static constexpr double epsilon = 1e-12;
};

/// Component gradients over one shared parameter set (all same shape).
struct ComponentGrads {
  Matrix ce;
  Matrix margin_mean;
  Matrix margin_var;
  Matrix mom_mean;
  Matrix mom_cov;
  double lambda_mom = 1.0;
};

/// logit(i, k) = tau * dot(v_i, c_k); rows of both inputs must be
/// unit-norm within 1e-9.
Matrix cosine_logits(const Matrix& image_feats, const Matrix& class_embs, double tau);

/// Mean cross-entropy with gradient w.r.t. the logits:
/// grad[i] = (softmax(z_i) - onehot(y_i)) / N.
LossValueGrad cross_entropy(const LabeledLogits& in);

MarginStats margins(const LabeledLogits& in,
                    VarianceConvention conv = VarianceConvention::population);

/// Mean-variance margin regularizer
///   L = -alpha * mean(m) + beta * Var(m)
/// with gradient routed +dL/dm_i to the true-class logit and -dL/dm_i to
/// the recorded competitor logit.
LossValueGrad margin_loss(const MarginStats& stats, double alpha, double beta);

struct MarginLossParts {
  LossValueGrad mean_term;  // -alpha * mean(m)
  LossValueGrad var_term;   // beta * Var(m)
};
MarginLossParts margin_loss_parts(const MarginStats& stats, double alpha, double beta);

MomentSummary moment_summary(const Matrix& embs);

/// Moment-matching loss |mu_t - mu_f|^2 + |Sigma_t - Sigma_f|_F^2 with
/// analytic gradient w.r.t. the tuned rows; the frozen set is constant.
LossValueGrad moment_loss(const Matrix& tuned, const Matrix& frozen);

struct MomentLossParts {
  LossValueGrad mean_term;  // |mu_t - mu_f|^2
  LossValueGrad cov_term;   // |Sigma_t - Sigma_f|_F^2
};
MomentLossParts moment_loss_parts(const Matrix& tuned, const Matrix& frozen);

/// Per-row mean L1 alignment baseline; subgradient sign(.), sign(0) = 0.
LossValueGrad l1_align_loss(const Matrix& tuned, const Matrix& frozen);

/// Margin-based label smoothing baseline:
/// weight * mean_{i,j} max(0, max_k z[i,k] - z[i,j] - margin_cap).
LossValueGrad mbls_loss(const Matrix& logits, double margin_cap, double weight);

/// L_total = ce + lambda_margin * margin + lambda_mom * mom over gradients
/// that were already mapped to one shared parameter shape.
LossValueGrad total_loss(const LossValueGrad& ce, const LossValueGrad& margin,
                         const LossValueGrad& mom, const LossWeights& w);

GradRatioLog grad_ratios(const ComponentGrads& grads);

}  // namespace calib

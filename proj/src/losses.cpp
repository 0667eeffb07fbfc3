#include "calib/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace calib {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("shape mismatch");
}

double variance_scale(VarianceConvention conv, std::size_t n) {
  if (conv == VarianceConvention::sample) {
    return n > 1 ? 1.0 / static_cast<double>(n - 1) : 0.0;
  }
  return 1.0 / static_cast<double>(n);
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {alpha, beta, lambda_margin, lambda_mom, tau, lambda_l1, mbls_weight, mbls_cap})
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("loss weights must be finite and >= 0");
  if (tau <= 0.0) throw std::invalid_argument("tau must be > 0");
}

Matrix cosine_logits(const Matrix& image_feats, const Matrix& class_embs, double tau) {
  if (image_feats.cols() != class_embs.cols())
    throw std::invalid_argument("shape mismatch");
  for (std::size_t i = 0; i < image_feats.rows(); ++i)
    if (std::abs(l2_norm(image_feats.row(i)) - 1.0) > 1e-9)
      throw std::invalid_argument("unnormalized embedding");
  for (std::size_t k = 0; k < class_embs.rows(); ++k)
    if (std::abs(l2_norm(class_embs.row(k)) - 1.0) > 1e-9)
      throw std::invalid_argument("unnormalized embedding");

  Matrix logits(image_feats.rows(), class_embs.rows());
  for (std::size_t i = 0; i < image_feats.rows(); ++i)
    for (std::size_t k = 0; k < class_embs.rows(); ++k)
      logits(i, k) = tau * dot(image_feats.row(i), class_embs.row(k));
  return logits;
}

LossValueGrad cross_entropy(const LabeledLogits& in) {
  in.validate();
  const std::size_t n = in.num_samples(), k = in.num_classes();
  Matrix probs = softmax(in.logits);

  LossValueGrad out;
  out.grad = Matrix(n, k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double p_true = std::max(probs(i, static_cast<std::size_t>(in.labels[i])), 1e-300);
    total += -std::log(p_true);
    for (std::size_t j = 0; j < k; ++j) {
      double g = probs(i, j);
      if (static_cast<int>(j) == in.labels[i]) g -= 1.0;
      out.grad(i, j) = g / static_cast<double>(n);
    }
  }
  out.value = total / static_cast<double>(n);
  return out;
}

MarginStats margins(const LabeledLogits& in, VarianceConvention conv) {
  if (in.num_classes() < 2) throw std::invalid_argument("margin undefined");
  in.validate();

  const std::size_t n = in.num_samples();
  MarginStats st;
  st.convention = conv;
  st.num_classes = in.num_classes();
  st.margins.resize(n);
  st.true_class.resize(n);
  st.competitor.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    int y = in.labels[i];
    int comp = -1;
    for (std::size_t j = 0; j < in.num_classes(); ++j) {
      if (static_cast<int>(j) == y) continue;
      if (comp < 0 || in.logits(i, j) > in.logits(i, static_cast<std::size_t>(comp)))
        comp = static_cast<int>(j);
    }
    st.true_class[i] = y;
    st.competitor[i] = comp;
    st.margins[i] = in.logits(i, static_cast<std::size_t>(y)) -
                    in.logits(i, static_cast<std::size_t>(comp));
  }

  double sum = 0.0;
  for (double m : st.margins) sum += m;
  st.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double m : st.margins) ss += (m - st.mean) * (m - st.mean);
  st.variance = ss * variance_scale(conv, n);
  return st;
}

MarginLossParts margin_loss_parts(const MarginStats& stats, double alpha, double beta) {
  const std::size_t n = stats.margins.size();
  if (n == 0) throw std::invalid_argument("no samples");

  MarginLossParts parts;
  parts.mean_term.value = -alpha * stats.mean;
  parts.var_term.value = beta * stats.variance;
  parts.mean_term.grad = Matrix(n, stats.num_classes);
  parts.var_term.grad = Matrix(n, stats.num_classes);

  const double vscale = variance_scale(stats.convention, n);
  for (std::size_t i = 0; i < n; ++i) {
    double d_mean = -alpha / static_cast<double>(n);
    double d_var = beta * 2.0 * (stats.margins[i] - stats.mean) * vscale;
    auto y = static_cast<std::size_t>(stats.true_class[i]);
    auto c = static_cast<std::size_t>(stats.competitor[i]);
    parts.mean_term.grad(i, y) += d_mean;
    parts.mean_term.grad(i, c) -= d_mean;
    parts.var_term.grad(i, y) += d_var;
    parts.var_term.grad(i, c) -= d_var;
  }
  return parts;
}

LossValueGrad margin_loss(const MarginStats& stats, double alpha, double beta) {
  MarginLossParts parts = margin_loss_parts(stats, alpha, beta);
  LossValueGrad out;
  out.value = parts.mean_term.value + parts.var_term.value;
  out.grad = parts.mean_term.grad;
  add_scaled(out.grad, 1.0, parts.var_term.grad);
  return out;
}

MomentSummary moment_summary(const Matrix& embs) {
  if (embs.rows() == 0) throw std::invalid_argument("no rows");
  const std::size_t n = embs.rows(), d = embs.cols();

  MomentSummary ms;
  ms.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) ms.mean[c] += embs(i, c);
  for (double& v : ms.mean) v /= static_cast<double>(n);

  ms.covariance = Matrix(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      double da = embs(i, a) - ms.mean[a];
      for (std::size_t b = 0; b < d; ++b)
        ms.covariance(a, b) += da * (embs(i, b) - ms.mean[b]);
    }
  for (double& v : ms.covariance.data()) v /= static_cast<double>(n);
  return ms;
}

MomentLossParts moment_loss_parts(const Matrix& tuned, const Matrix& frozen) {
  check_same_shape(tuned, frozen);
  const std::size_t n = tuned.rows(), d = tuned.cols();
  MomentSummary mt = moment_summary(tuned);
  MomentSummary mf = moment_summary(frozen);

  std::vector<double> dmu(d);
  for (std::size_t c = 0; c < d; ++c) dmu[c] = mt.mean[c] - mf.mean[c];
  Matrix dsigma(d, d);
  for (std::size_t i = 0; i < d * d; ++i)
    dsigma.data()[i] = mt.covariance.data()[i] - mf.covariance.data()[i];

  MomentLossParts parts;
  parts.mean_term.value = dot(dmu, dmu);
  parts.cov_term.value = 0.0;
  for (double v : dsigma.data()) parts.cov_term.value += v * v;

  // d/dx_i |dmu|^2 = (2/n) dmu
  // d/dx_i |dSigma|_F^2 = (4/n) dSigma (x_i - mu_t), using dSigma symmetric
  parts.mean_term.grad = Matrix(n, d);
  parts.cov_term.grad = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> centered(d);
    for (std::size_t c = 0; c < d; ++c) centered[c] = tuned(i, c) - mt.mean[c];
    for (std::size_t a = 0; a < d; ++a) {
      parts.mean_term.grad(i, a) = 2.0 * dmu[a] / static_cast<double>(n);
      double s = 0.0;
      for (std::size_t b = 0; b < d; ++b) s += dsigma(a, b) * centered[b];
      parts.cov_term.grad(i, a) = 4.0 * s / static_cast<double>(n);
    }
  }
  return parts;
}

LossValueGrad moment_loss(const Matrix& tuned, const Matrix& frozen) {
  MomentLossParts parts = moment_loss_parts(tuned, frozen);
  LossValueGrad out;
  out.value = parts.mean_term.value + parts.cov_term.value;
  out.grad = parts.mean_term.grad;
  add_scaled(out.grad, 1.0, parts.cov_term.grad);
  return out;
}

LossValueGrad l1_align_loss(const Matrix& tuned, const Matrix& frozen) {
  check_same_shape(tuned, frozen);
  const std::size_t n = tuned.rows();
  LossValueGrad out;
  out.grad = Matrix(tuned.rows(), tuned.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < tuned.data().size(); ++i) {
    double diff = tuned.data()[i] - frozen.data()[i];
    total += std::abs(diff);
    double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    out.grad.data()[i] = s / static_cast<double>(n);
  }
  out.value = total / static_cast<double>(n);
  return out;
}

LossValueGrad mbls_loss(const Matrix& logits, double margin_cap, double weight) {
  if (!logits.all_finite()) throw std::invalid_argument("non-finite logit");
  const std::size_t n = logits.rows(), k = logits.cols();
  const double scale = weight / static_cast<double>(n * k);

  LossValueGrad out;
  out.grad = Matrix(n, k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t top = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits(i, j) > logits(i, top)) top = j;
    for (std::size_t j = 0; j < k; ++j) {
      double excess = logits(i, top) - logits(i, j) - margin_cap;
      if (excess > 0.0) {
        total += excess;
        out.grad(i, top) += scale;
        out.grad(i, j) -= scale;
      }
    }
  }
  out.value = total * scale;
  return out;
}

LossValueGrad total_loss(const LossValueGrad& ce, const LossValueGrad& margin,
                         const LossValueGrad& mom, const LossWeights& w) {
  if (!ce.grad.same_shape(margin.grad) || !ce.grad.same_shape(mom.grad))
    throw std::invalid_argument("shape mismatch");
  LossValueGrad out;
  out.value = ce.value + w.lambda_margin * margin.value + w.lambda_mom * mom.value;
  out.grad = ce.grad;
  add_scaled(out.grad, w.lambda_margin, margin.grad);
  add_scaled(out.grad, w.lambda_mom, mom.grad);
  return out;
}

GradRatioLog grad_ratios(const ComponentGrads& g) {
  const double eps = GradRatioLog::epsilon;

  Matrix margin_total = g.margin_mean;
  add_scaled(margin_total, 1.0, g.margin_var);
  Matrix mom_total = g.mom_mean;
  add_scaled(mom_total, 1.0, g.mom_cov);

  GradRatioLog log;
  log.rho_margin = frobenius_norm(g.margin_mean) / (frobenius_norm(g.margin_var) + eps);
  log.rho_mom = g.lambda_mom * frobenius_norm(g.mom_mean) /
                (g.lambda_mom * frobenius_norm(g.mom_cov) + eps);
  log.rho_mom_over_margin = frobenius_norm(mom_total) / (frobenius_norm(margin_total) + eps);
  log.rho_margin_over_ce = frobenius_norm(margin_total) / (frobenius_norm(g.ce) + eps);
  log.rho_mom_over_ce = frobenius_norm(mom_total) / (frobenius_norm(g.ce) + eps);
  return log;
}

}  // namespace calib

#include "calib/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace calib {

namespace {

/// Sum after sorting ascending by value. Bin members are an unordered set
/// conceptually; summing in value order makes the result invariant under
/// any permutation of the input samples, not just reproducible.
double canonical_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

void check_probs(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows() == 0 || probs.cols() == 0) throw std::invalid_argument("no samples");
  if (labels.size() != probs.rows())
    throw std::invalid_argument("labels/probs row count mismatch");
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      double p = probs(i, j);
      if (!std::isfinite(p) || p < 0.0) throw std::invalid_argument("invalid probability");
      row_sum += p;
    }
    if (std::abs(row_sum - 1.0) > 1e-9)
      throw std::invalid_argument("probability rows must sum to 1");
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols())
      throw std::invalid_argument("label out of range");
  }
}

struct BinAccum {
  std::vector<double> confs;
  std::size_t correct = 0;
};

std::vector<BinStat> finalize_bins(std::vector<BinAccum>& accums,
                                   const std::vector<std::pair<double, double>>& edges) {
  std::vector<BinStat> bins(accums.size());
  for (std::size_t b = 0; b < accums.size(); ++b) {
    BinStat& st = bins[b];
    st.lower = edges[b].first;
    st.upper = edges[b].second;
    st.count = accums[b].confs.size();
    if (st.count > 0) {
      st.mean_confidence = canonical_sum(accums[b].confs) / static_cast<double>(st.count);
      st.accuracy = static_cast<double>(accums[b].correct) / static_cast<double>(st.count);
    }
  }
  return bins;
}

}  // namespace

void LabeledLogits::validate() const {
  if (logits.rows() < 1) throw std::invalid_argument("no samples");
  if (logits.cols() < 2) throw std::invalid_argument("need at least 2 classes");
  if (labels.size() != logits.rows())
    throw std::invalid_argument("labels/logits row count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw std::invalid_argument("label out of range");
  if (!logits.all_finite()) throw std::invalid_argument("non-finite logit");
}

Matrix softmax(const Matrix& logits) {
  if (!logits.all_finite()) throw std::invalid_argument("non-finite logit");
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double m = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) m = std::max(m, logits(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      double e = std::exp(logits(i, j) - m);
      probs(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) probs(i, j) /= denom;
  }
  return probs;
}

std::vector<int> predict_top1(const Matrix& probs) {
  std::vector<int> pred(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    pred[i] = static_cast<int>(best);
  }
  return pred;
}

std::vector<double> top1_confidence(const Matrix& probs) {
  std::vector<double> conf(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double m = probs(i, 0);
    for (std::size_t j = 1; j < probs.cols(); ++j) m = std::max(m, probs(i, j));
    conf[i] = m;
  }
  return conf;
}

std::vector<BinStat> reliability_bins(const Matrix& probs, std::span<const int> labels,
                                      const BinningConfig& cfg) {
  if (cfg.num_bins < 1) throw std::invalid_argument("num_bins must be >= 1");
  check_probs(probs, labels);

  const std::size_t n = probs.rows();
  const int nb = cfg.num_bins;
  std::vector<double> conf = top1_confidence(probs);
  std::vector<int> pred = predict_top1(probs);

  std::vector<BinAccum> accums(nb);
  std::vector<std::pair<double, double>> edges(nb);

  if (cfg.scheme == BinScheme::equal_width) {
    // Bin b covers ((b-1)/B, b/B]; confidence 0 goes to the first bin.
    for (int b = 0; b < nb; ++b)
      edges[b] = {static_cast<double>(b) / nb, static_cast<double>(b + 1) / nb};
    for (std::size_t i = 0; i < n; ++i) {
      int b = static_cast<int>(std::ceil(conf[i] * nb)) - 1;
      b = std::clamp(b, 0, nb - 1);
      accums[b].confs.push_back(conf[i]);
      if (pred[i] == labels[i]) accums[b].correct++;
    }
  } else {
    // Sort by confidence, ties kept in sample-index order, then chunk into
    // near-equal groups; sizes differ by at most one, extras go first.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return conf[a] < conf[b]; });
    std::size_t base = n / nb, rem = n % nb, pos = 0;
    for (int b = 0; b < nb; ++b) {
      std::size_t size = base + (static_cast<std::size_t>(b) < rem ? 1 : 0);
      double lo = 0.0, hi = 0.0;
      if (size > 0) {
        lo = conf[order[pos]];
        hi = conf[order[pos + size - 1]];
      }
      edges[b] = {lo, hi};
      for (std::size_t k = 0; k < size; ++k) {
        std::size_t i = order[pos + k];
        accums[b].confs.push_back(conf[i]);
        if (pred[i] == labels[i]) accums[b].correct++;
      }
      pos += size;
    }
  }
  return finalize_bins(accums, edges);
}

double ece(std::span<const BinStat> bins, std::size_t total) {
  if (total == 0) throw std::invalid_argument("no samples");
  double acc = 0.0;
  for (const BinStat& b : bins) {
    if (b.count == 0) continue;
    double w = static_cast<double>(b.count) / static_cast<double>(total);
    acc += w * std::abs(*b.accuracy - *b.mean_confidence);
  }
  return acc;
}

double mce(std::span<const BinStat> bins, std::size_t total) {
  if (total == 0) throw std::invalid_argument("no samples");
  double worst = 0.0;
  for (const BinStat& b : bins) {
    if (b.count == 0) continue;
    worst = std::max(worst, std::abs(*b.accuracy - *b.mean_confidence));
  }
  return worst;
}

double ace(const Matrix& probs, std::span<const int> labels, int num_bins) {
  BinningConfig cfg{num_bins, BinScheme::equal_mass};
  auto bins = reliability_bins(probs, labels, cfg);
  return ece(bins, probs.rows());
}

double nll(const Matrix& probs, std::span<const int> labels) {
  check_probs(probs, labels);
  std::vector<double> terms(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double p = std::max(probs(i, static_cast<std::size_t>(labels[i])), 1e-300);
    terms[i] = -std::log(p);
  }
  return canonical_sum(std::move(terms)) / static_cast<double>(probs.rows());
}

TemperatureFit fit_temperature(const LabeledLogits& val) {
  val.validate();

  auto nll_at_log_t = [&](double x) {
    double inv_t = std::exp(-x);
    Matrix scaled(val.logits.rows(), val.logits.cols());
    for (std::size_t i = 0; i < scaled.data().size(); ++i)
      scaled.data()[i] = val.logits.data()[i] * inv_t;
    return nll(softmax(scaled), val.labels);
  };

  constexpr double lo_bound = -5.0, hi_bound = 5.0;
  constexpr int iterations = 200;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;

  double a = lo_bound, b = hi_bound;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  // Ties prefer the left probe so that flat stretches (NLL exactly 0 on
  // confidently-correct logits) resolve toward the smallest temperature.
  double fc = nll_at_log_t(c), fd = nll_at_log_t(d);
  for (int it = 0; it < iterations; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = nll_at_log_t(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = nll_at_log_t(d);
    }
  }
  double x = 0.5 * (a + b);

  TemperatureFit fit;
  if (x <= lo_bound + 1e-6) {
    x = lo_bound;
    fit.boundary = true;
  } else if (x >= hi_bound - 1e-6) {
    x = hi_bound;
    fit.boundary = true;
  }
  fit.temperature = std::exp(x);
  fit.nll_at_one = nll_at_log_t(0.0);
  fit.nll_at_fit = nll_at_log_t(x);
  return fit;
}

CalibrationReport compute_report(const LabeledLogits& in, const BinningConfig& cfg) {
  in.validate();
  Matrix probs = softmax(in.logits);

  CalibrationReport rep;
  rep.bins = reliability_bins(probs, in.labels, cfg);
  rep.ece = ece(rep.bins, in.num_samples());
  rep.mce = mce(rep.bins, in.num_samples());
  rep.ace = ace(probs, in.labels, cfg.num_bins);
  rep.nll = nll(probs, in.labels);

  std::vector<int> pred = predict_top1(probs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < in.num_samples(); ++i)
    if (pred[i] == in.labels[i]) correct++;
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(in.num_samples());
  rep.mean_confidence =
      canonical_sum(top1_confidence(probs)) / static_cast<double>(in.num_samples());
  return rep;
}

}  // namespace calib

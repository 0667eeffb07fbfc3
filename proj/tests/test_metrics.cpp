#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "calib/metrics.hpp"
#include "oracles.hpp"

using namespace calib;

TEST_CASE("softmax symmetry and analytic values") {
  Matrix z = Matrix::from_rows({{0.0, 0.0}});
  Matrix p = softmax(z);
  CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

  Matrix z2 = Matrix::from_rows({{std::log(2.0), 0.0}});
  Matrix p2 = softmax(z2);
  CHECK(std::abs(p2(0, 0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(p2(0, 1) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("softmax matches naive oracle and rows sum to one") {
  std::mt19937_64 rng(101);
  Matrix z = oracles::random_matrix(rng, 100, 7);
  Matrix p = softmax(z);
  Matrix p_oracle = oracles::naive_softmax(z);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      CHECK(std::abs(p(i, j) - p_oracle(i, j)) < 1e-12);
      row_sum += p(i, j);
    }
    CHECK(std::abs(row_sum - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Matrix z = Matrix::from_rows({{1.0, std::numeric_limits<double>::infinity()}});
  CHECK_THROWS_WITH_AS(softmax(z), "non-finite logit", std::invalid_argument);
}

TEST_CASE("softmax is stable at extreme magnitudes") {
  Matrix z = Matrix::from_rows({{1000.0, 0.0}, {-1000.0, 0.0}});
  Matrix p = softmax(z);
  CHECK(p(0, 0) == doctest::Approx(1.0));
  CHECK(p(1, 1) == doctest::Approx(1.0));
  CHECK(p.all_finite());
}

TEST_CASE("reliability bins: perfect two-sample case") {
  Matrix probs = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  std::vector<int> labels = {0, 1};
  auto bins = reliability_bins(probs, labels, {10, BinScheme::equal_width});
  REQUIRE(bins.size() == 10);
  for (std::size_t b = 0; b + 1 < bins.size(); ++b) CHECK(bins[b].count == 0);
  const BinStat& top = bins.back();
  CHECK(top.count == 2);
  CHECK(top.lower == doctest::Approx(0.9));
  CHECK(top.upper == doctest::Approx(1.0));
  CHECK(*top.accuracy == 1.0);
  CHECK(*top.mean_confidence == 1.0);
  CHECK_FALSE(bins.front().mean_confidence.has_value());
}

TEST_CASE("reliability bins: single 0.6-confidence miss") {
  Matrix probs = Matrix::from_rows({{0.6, 0.4}});
  std::vector<int> labels = {1};
  auto bins = reliability_bins(probs, labels, {10, BinScheme::equal_width});
  const BinStat& b = bins[5];  // (0.5, 0.6]
  CHECK(b.lower == doctest::Approx(0.5));
  CHECK(b.upper == doctest::Approx(0.6));
  CHECK(b.count == 1);
  CHECK(*b.accuracy == 0.0);
  CHECK(*b.mean_confidence == doctest::Approx(0.6));
  CHECK(ece(bins, 1) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("reliability bins reject empty input") {
  Matrix probs;
  std::vector<int> labels;
  CHECK_THROWS_WITH_AS(reliability_bins(probs, labels, {}), "no samples",
                       std::invalid_argument);
}

TEST_CASE("equal-width assignment matches per-sample loop oracle") {
  std::mt19937_64 rng(202);
  auto data = oracles::random_labeled_logits(rng, 1000, 5);
  Matrix probs = softmax(data.logits);
  auto bins = reliability_bins(probs, data.labels, {15, BinScheme::equal_width});
  auto oracle_bins = oracles::equal_width_bins(oracles::top1_conf(probs), 15);
  REQUIRE(bins.size() == oracle_bins.size());
  for (std::size_t b = 0; b < bins.size(); ++b)
    CHECK(bins[b].count == oracle_bins[b].members.size());
  CHECK(std::abs(ece(bins, 1000) -
                 oracles::binned_calibration_error(probs, data.labels, oracle_bins, false)) <
        1e-12);
  CHECK(std::abs(mce(bins, 1000) -
                 oracles::binned_calibration_error(probs, data.labels, oracle_bins, true)) <
        1e-12);
}

TEST_CASE("ece trivial values") {
  Matrix probs = Matrix::from_rows({{1.0, 0.0}, {1.0, 0.0}});
  std::vector<int> labels = {0, 0};
  auto bins = reliability_bins(probs, labels, {10, BinScheme::equal_width});
  CHECK(ece(bins, 2) == 0.0);
  CHECK_THROWS_AS(ece(bins, 0), std::invalid_argument);
}

TEST_CASE("mce from hand-built bins with gaps 0.1 and 0.3") {
  std::vector<BinStat> bins(2);
  bins[0] = {0.0, 0.5, 90, 0.5, 0.6};
  bins[1] = {0.5, 1.0, 10, 0.9, 0.6};
  CHECK(mce(bins, 100) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(ece(bins, 100) == doctest::Approx(0.9 * 0.1 + 0.1 * 0.3).epsilon(1e-12));

  std::vector<BinStat> single = {BinStat{0.5, 0.6, 1, 0.6, 0.0}};
  CHECK(mce(single, 1) == doctest::Approx(ece(single, 1)).epsilon(1e-15));
}

TEST_CASE("ace equals ece over an independent equal-mass partition") {
  std::mt19937_64 rng(303);
  auto data = oracles::random_labeled_logits(rng, 500, 6);
  Matrix probs = softmax(data.logits);
  auto oracle_bins = oracles::equal_mass_bins(oracles::top1_conf(probs), 15);
  double expected = oracles::binned_calibration_error(probs, data.labels, oracle_bins, false);
  CHECK(std::abs(ace(probs, data.labels, 15) - expected) < 1e-12);
}

TEST_CASE("equal-mass bin sizes differ by at most one") {
  std::mt19937_64 rng(404);
  for (std::size_t n : {7u, 15u, 16u, 230u}) {
    auto data = oracles::random_labeled_logits(rng, n, 4);
    Matrix probs = softmax(data.logits);
    auto bins = reliability_bins(probs, data.labels, {15, BinScheme::equal_mass});
    std::size_t lo = n, hi = 0, total = 0;
    for (const auto& b : bins) {
      lo = std::min(lo, b.count);
      hi = std::max(hi, b.count);
      total += b.count;
    }
    CHECK(hi - lo <= 1);
    CHECK(total == n);
  }
}

TEST_CASE("nll trivial and oracle values") {
  Matrix uniform(3, 4, 0.25);
  std::vector<int> labels = {0, 1, 3};
  CHECK(nll(uniform, labels) == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  Matrix certain = Matrix::from_rows({{1.0, 0.0}});
  std::vector<int> one = {0};
  CHECK(nll(certain, one) == 0.0);

  std::mt19937_64 rng(505);
  auto data = oracles::random_labeled_logits(rng, 257, 9);
  Matrix probs = softmax(data.logits);
  CHECK(std::abs(nll(probs, data.labels) - oracles::nll_loop(probs, data.labels)) < 1e-12);
}

TEST_CASE("metrics are invariant under sample permutation") {
  std::mt19937_64 rng(606);
  auto data = oracles::random_labeled_logits(rng, 400, 5);
  Matrix probs = softmax(data.logits);
  BinningConfig cfg{15, BinScheme::equal_width};
  auto bins = reliability_bins(probs, data.labels, cfg);
  double e0 = ece(bins, 400), m0 = mce(bins, 400), a0 = ace(probs, data.labels, 15);
  double n0 = nll(probs, data.labels);

  std::vector<std::size_t> perm(400);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix probs_p(400, 5);
  std::vector<int> labels_p(400);
  for (std::size_t i = 0; i < 400; ++i) {
    labels_p[i] = data.labels[perm[i]];
    for (std::size_t j = 0; j < 5; ++j) probs_p(i, j) = probs(perm[i], j);
  }
  auto bins_p = reliability_bins(probs_p, labels_p, cfg);
  CHECK(ece(bins_p, 400) == e0);
  CHECK(mce(bins_p, 400) == m0);
  CHECK(ace(probs_p, labels_p, 15) == a0);
  CHECK(nll(probs_p, labels_p) == n0);
}

TEST_CASE("ece is invariant under relabeling of non-predicted classes") {
  std::mt19937_64 rng(707);
  auto data = oracles::random_labeled_logits(rng, 300, 5);
  Matrix probs = softmax(data.logits);
  auto pred = predict_top1(probs);

  // Swap the probability mass of two non-predicted classes per sample;
  // top-1 confidence and correctness are untouched.
  Matrix probs2 = probs;
  std::vector<int> labels2 = data.labels;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < 5; ++j)
      if (static_cast<int>(j) != pred[i] && static_cast<int>(j) != data.labels[i])
        others.push_back(j);
    std::swap(probs2(i, others[0]), probs2(i, others[1]));
  }
  auto bins = reliability_bins(probs, data.labels, {15, BinScheme::equal_width});
  auto bins2 = reliability_bins(probs2, labels2, {15, BinScheme::equal_width});
  CHECK(ece(bins, 300) == ece(bins2, 300));
}

TEST_CASE("ece <= mce and ece in [0, 1] on random batches") {
  std::mt19937_64 rng(808);
  for (int trial = 0; trial < 20; ++trial) {
    auto data = oracles::random_labeled_logits(rng, 200 + trial * 37, 3 + trial % 6);
    CalibrationReport rep = compute_report(data);
    CHECK(rep.ece <= rep.mce + 1e-15);
    CHECK(rep.ece >= 0.0);
    CHECK(rep.ece <= 1.0);
  }
}

TEST_CASE("monotone argmax-preserving transform keeps accuracy") {
  std::mt19937_64 rng(909);
  auto data = oracles::random_labeled_logits(rng, 200, 4);
  CalibrationReport before = compute_report(data);
  LabeledLogits scaled = data;
  for (double& v : scaled.logits.data()) v *= 3.7;  // preserves per-row argmax
  CalibrationReport after = compute_report(scaled);
  CHECK(before.accuracy == after.accuracy);
}

TEST_CASE("fit_temperature hits the lower bound on separable logits") {
  LabeledLogits data;
  data.logits = Matrix::from_rows({{10.0, 0.0}, {0.0, 10.0}});
  data.labels = {0, 1};
  TemperatureFit fit = fit_temperature(data);
  CHECK(fit.boundary);
  CHECK(fit.temperature == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
}

TEST_CASE("temperature 1 leaves softmax unchanged") {
  std::mt19937_64 rng(111);
  Matrix z = oracles::random_matrix(rng, 20, 4);
  Matrix scaled = z;
  for (double& v : scaled.data()) v /= 1.0;
  Matrix a = softmax(z), b = softmax(scaled);
  for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("fit_temperature matches the 1e-4 grid oracle") {
  std::mt19937_64 rng(222);
  // Miscalibrated fixture: logits deliberately over-sharpened.
  auto data = oracles::random_labeled_logits(rng, 200, 4, 1.0);
  for (double& v : data.logits.data()) v *= 4.0;
  // Make labels agree with argmax often enough that T* is interior.
  auto pred = oracles::top1(data.logits);
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    if (i % 3 != 0) data.labels[i] = pred[i];

  TemperatureFit fit = fit_temperature(data);
  double t_grid = oracles::grid_search_temperature(data);
  CHECK_FALSE(fit.boundary);
  CHECK(std::abs(fit.temperature - t_grid) < 1e-3);
  CHECK(fit.nll_at_fit < fit.nll_at_one);
}

TEST_CASE("compute_report validates labels and finiteness") {
  LabeledLogits bad;
  bad.logits = Matrix::from_rows({{0.0, 1.0}});
  bad.labels = {2};
  CHECK_THROWS_AS(compute_report(bad), std::invalid_argument);
  bad.labels = {0};
  bad.logits(0, 1) = std::nan("");
  CHECK_THROWS_WITH_AS(compute_report(bad), "non-finite logit", std::invalid_argument);
}

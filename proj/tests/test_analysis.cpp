#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "calib/analysis.hpp"
#include "oracles.hpp"

using namespace calib;

TEST_CASE("ecdf trivials") {
  std::vector<double> m = {1.0, 2.0, 3.0};
  EcdfSeries s = margin_ecdf(m);
  CHECK(s.values == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(s.fractions[0] == doctest::Approx(1.0 / 3.0));
  CHECK(s.fractions[1] == doctest::Approx(2.0 / 3.0));
  CHECK(s.fractions[2] == 1.0);
  CHECK(box_stats(m).median == 2.0);

  std::vector<double> constant(5, 4.2);
  CHECK(box_stats(constant).iqr == 0.0);
}

TEST_CASE("ecdf is a nondecreasing step function ending at 1") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> dist;
  std::vector<double> m(257);
  for (double& v : m) v = dist(rng);
  EcdfSeries s = margin_ecdf(m);
  for (std::size_t i = 1; i < s.values.size(); ++i) {
    CHECK(s.values[i] >= s.values[i - 1]);
    CHECK(s.fractions[i] > s.fractions[i - 1]);
  }
  CHECK(s.fractions.back() == 1.0);
}

TEST_CASE("type-7 quantiles match a sort-based oracle") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> dist;
  std::vector<double> xs(1000);
  for (double& v : xs) v = dist(rng);

  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  for (double p : {0.0, 0.25, 0.5, 0.75, 0.9, 1.0}) {
    double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    std::size_t lo = static_cast<std::size_t>(std::floor(h));
    double expect = lo + 1 < sorted.size()
                        ? sorted[lo] + (h - std::floor(h)) * (sorted[lo + 1] - sorted[lo])
                        : sorted.back();
    CHECK(std::abs(quantile_type7(xs, p) - expect) < 1e-12);
  }
}

TEST_CASE("error histogram trivials and mass conservation") {
  Matrix all_correct = Matrix::from_rows({{0.9, 0.1}, {0.8, 0.2}});
  std::vector<int> labels = {0, 0};
  auto zeros = error_confidence_histogram(all_correct, labels, 10);
  for (std::size_t c : zeros) CHECK(c == 0);

  Matrix one_wrong = Matrix::from_rows({{0.95, 0.05}});
  std::vector<int> wrong = {1};
  auto hist = error_confidence_histogram(one_wrong, wrong, 10);
  CHECK(hist[9] == 1);

  std::mt19937_64 rng(3);
  auto data = oracles::random_labeled_logits(rng, 400, 5);
  Matrix probs = softmax(data.logits);
  auto pred = predict_top1(probs);
  std::size_t wrong_count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] != data.labels[i]) ++wrong_count;
  auto full = error_confidence_histogram(probs, data.labels, 15);
  std::size_t mass = 0;
  for (std::size_t c : full) mass += c;
  CHECK(mass == wrong_count);
}

TEST_CASE("pearson correlation: lines, oracle, and degenerate input") {
  std::vector<double> xs = {1.0, 2.0, 3.0, 4.0};
  std::vector<double> up = {2.0, 4.0, 6.0, 8.0};
  std::vector<double> down = {5.0, 3.0, 1.0, -1.0};
  CHECK(pearson(xs, up) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(xs, down) == doctest::Approx(-1.0).epsilon(1e-12));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> dist;
  std::vector<double> a(50), b(50);
  for (std::size_t i = 0; i < 50; ++i) {
    a[i] = dist(rng);
    b[i] = 0.3 * a[i] + dist(rng);
  }
  // covariance-formula oracle
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= 50.0;
  mb /= 50.0;
  double cab = 0.0, caa = 0.0, cbb = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    cab += (a[i] - ma) * (b[i] - mb);
    caa += (a[i] - ma) * (a[i] - ma);
    cbb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(std::abs(pearson(a, b) - cab / std::sqrt(caa * cbb)) < 1e-12);

  std::vector<double> flat = {1.0, 1.0, 1.0};
  std::vector<double> ys = {1.0, 2.0, 3.0};
  CHECK_THROWS_WITH_AS(pearson(flat, ys), "degenerate correlation", std::invalid_argument);
  std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS_AS(pearson(two, two), std::invalid_argument);
}

TEST_CASE("pearson is invariant under positive affine transforms") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist;
  std::vector<double> a(40), b(40), a2(40), b2(40);
  for (std::size_t i = 0; i < 40; ++i) {
    a[i] = dist(rng);
    b[i] = dist(rng) - 0.5 * a[i];
    a2[i] = 3.0 * a[i] + 7.0;
    b2[i] = 0.25 * b[i] - 2.0;
  }
  CHECK(std::abs(pearson(a, b) - pearson(a2, b2)) < 1e-12);
}

TEST_CASE("variability-ece correlation wraps run points") {
  std::vector<RunPoint> runs = {{0.1, 0.02}, {0.2, 0.04}, {0.3, 0.06}, {0.4, 0.08}};
  CHECK(variability_ece_correlation(runs) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(variability_ece_correlation(runs, true) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("spearman handles monotone nonlinear relations") {
  std::vector<double> xs = {1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<double> ys = {1.0, 8.0, 27.0, 64.0, 125.0};
  CHECK(spearman(xs, ys) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ablation weights derive the fixed variant list") {
  auto variants = ablation_variants();
  REQUIRE(variants == std::vector<std::string>{"ce", "ce+margin", "ce+margin+l1",
                                               "ce+margin+mom"});
  LossWeights base;
  LossWeights ce = ablation_weights(base, "ce");
  CHECK(ce.lambda_margin == 0.0);
  CHECK(ce.lambda_mom == 0.0);
  LossWeights margin_only = ablation_weights(base, "ce+margin");
  CHECK(margin_only.lambda_margin == 1.0);
  CHECK(margin_only.lambda_mom == 0.0);
  LossWeights with_l1 = ablation_weights(base, "ce+margin+l1");
  CHECK(with_l1.lambda_l1 == 1.0);
  CHECK(with_l1.lambda_mom == 0.0);
  LossWeights full = ablation_weights(base, "ce+margin+mom");
  CHECK(full.lambda_mom == 5.0);
  CHECK_THROWS_AS(ablation_weights(base, "nope"), std::invalid_argument);
}

TEST_CASE("single-point sweep is deterministic and well-formed") {
  TaskConfig task_cfg;
  task_cfg.shots = 4;
  TrainConfig train_cfg;
  train_cfg.epochs = 5;
  SweepSettings settings;
  settings.eval_per_class = 20;

  std::vector<int> shots = {4};
  std::vector<std::uint64_t> seeds = {811};
  SweepResult r1 = shots_sweep(task_cfg, train_cfg, shots, seeds, settings);
  SweepResult r2 = shots_sweep(task_cfg, train_cfg, shots, seeds, settings);

  REQUIRE(r1.records.size() == 2);  // one per method
  CHECK(r1.records[0].method == "ce");
  CHECK(r1.records[1].method == "full");
  REQUIRE(r1.medians.size() == 2);
  for (std::size_t i = 0; i < r1.records.size(); ++i) {
    CHECK(r1.records[i].acc_base == r2.records[i].acc_base);
    CHECK(r1.records[i].ece_base == r2.records[i].ece_base);
    CHECK(r1.records[i].acc_novel == r2.records[i].acc_novel);
    CHECK(r1.records[i].ece_novel == r2.records[i].ece_novel);
  }
  // With one seed the median is the record itself.
  CHECK(r1.medians[0].ece_novel == r1.records[0].ece_novel);
}

TEST_CASE("repeating a template in the init sweep repeats its records") {
  TaskConfig task_cfg;
  task_cfg.shots = 4;
  TrainConfig train_cfg;
  train_cfg.epochs = 5;
  SweepSettings settings;
  settings.eval_per_class = 20;

  std::vector<std::string> templates = {"a picture of a {}", "a picture of a {}"};
  std::vector<std::uint64_t> seeds = {812};
  SweepResult r = init_robustness_sweep(task_cfg, train_cfg, templates, seeds, settings);
  REQUIRE(r.records.size() == 4);  // 2 templates x 2 methods
  CHECK(r.records[0].acc_base == r.records[2].acc_base);
  CHECK(r.records[1].ece_novel == r.records[3].ece_novel);
}

TEST_CASE("ablation suite produces the fixed ordered table") {
  TaskConfig task_cfg;
  task_cfg.shots = 4;
  TrainConfig train_cfg;
  train_cfg.epochs = 5;
  SweepSettings settings;
  settings.eval_per_class = 20;

  std::vector<std::uint64_t> seeds = {813, 814};
  SweepResult r = ablation_suite(task_cfg, train_cfg, seeds, settings);
  REQUIRE(r.records.size() == 8);  // 4 variants x 2 seeds
  REQUIRE(r.medians.size() == 4);
  auto variants = ablation_variants();
  for (std::size_t v = 0; v < 4; ++v) {
    CHECK(r.medians[v].axis == variants[v]);
    CHECK(r.medians[v].method == variants[v]);
  }

  // Medians are recomputable from the records.
  for (const SweepMedian& med : r.medians) {
    std::vector<double> vals;
    for (const SweepRecord& rec : r.records)
      if (rec.axis == med.axis && rec.method == med.method) vals.push_back(rec.ece_novel);
    CHECK(med.ece_novel == doctest::Approx(quantile_type7(vals, 0.5)).epsilon(1e-15));
  }
}

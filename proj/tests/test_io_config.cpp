#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "calib/config.hpp"
#include "calib/io.hpp"
#include "oracles.hpp"

using namespace calib;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("format_double round-trips arbitrary doubles") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> dist;
  for (int i = 0; i < 200; ++i) {
    double v = dist(rng) * std::pow(10.0, (i % 61) - 30);
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("logits csv round-trip is exact") {
  std::mt19937_64 rng(2);
  auto data = oracles::random_labeled_logits(rng, 23, 5);
  auto path = temp_file("calibtune_test_logits.csv");
  write_logits_csv(path, data);
  LabeledLogits loaded = read_logits_csv(path);
  CHECK(loaded.labels == data.labels);
  CHECK(loaded.logits.data() == data.logits.data());
  std::filesystem::remove(path);
}

TEST_CASE("logits csv parse errors carry line numbers") {
  auto path = temp_file("calibtune_test_bad.csv");
  write_text_file(path, "label,z0,z1\n0,1.0,2.0\n1,notanumber,0.5\n");
  CHECK_THROWS_WITH_AS(read_logits_csv(path), doctest::Contains("line 3"),
                       std::invalid_argument);
  write_text_file(path, "label,z0,z1\n0,1.0\n");
  CHECK_THROWS_WITH_AS(read_logits_csv(path), doctest::Contains("line 2"),
                       std::invalid_argument);
  write_text_file(path, "wrong,header\n");
  CHECK_THROWS_AS(read_logits_csv(path), std::invalid_argument);
  write_text_file(path, "label,z0,z1\n");
  CHECK_THROWS_WITH_AS(read_logits_csv(path), "no samples", std::invalid_argument);
  std::filesystem::remove(path);
}

TEST_CASE("logits csv accepts scientific notation and LF endings") {
  auto path = temp_file("calibtune_test_sci.csv");
  write_text_file(path, "label,z0,z1\n1,-1.5e-3,2E+2\n");
  LabeledLogits data = read_logits_csv(path);
  CHECK(data.logits(0, 0) == -1.5e-3);
  CHECK(data.logits(0, 1) == 200.0);
  std::filesystem::remove(path);
}

TEST_CASE("embeddings csv round-trip") {
  std::mt19937_64 rng(3);
  Matrix emb = oracles::random_matrix(rng, 6, 4);
  std::vector<int> ids = {8, 9, 10, 11, 12, 13};
  auto path = temp_file("calibtune_test_emb.csv");
  write_embeddings_csv(path, emb, ids);
  auto [loaded_ids, loaded] = read_embeddings_csv(path);
  CHECK(loaded_ids == ids);
  CHECK(loaded.data() == emb.data());
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint csv round-trip is exact") {
  std::mt19937_64 rng(4);
  Matrix context = oracles::random_matrix(rng, 4, 16);
  auto csv = temp_file("calibtune_test_ckpt.csv");
  auto sidecar = temp_file("calibtune_test_ckpt.json");
  write_checkpoint(csv, sidecar, context, 42, "deadbeefdeadbeef", 800);
  Matrix loaded = read_checkpoint_context(csv);
  CHECK(loaded.data() == context.data());
  std::string sidecar_text = read_text_file(sidecar);
  CHECK(sidecar_text.find("\"seed\": 42") != std::string::npos);
  CHECK(sidecar_text.find("deadbeefdeadbeef") != std::string::npos);
  std::filesystem::remove(csv);
  std::filesystem::remove(sidecar);
}

TEST_CASE("report json carries nulls for empty bins and 17-digit reals") {
  LabeledLogits data;
  data.logits = Matrix::from_rows({{3.0, 0.0}, {0.0, 3.0}});
  data.labels = {0, 1};
  CalibrationReport rep = compute_report(data, {10, BinScheme::equal_width});
  std::string json = report_to_json(rep).dump();
  CHECK(json.find("\"mean_confidence\":null") != std::string::npos);
  CHECK(json.find("\"ece\":") != std::string::npos);
  // percent flag scales the fraction metrics
  std::string pct = report_to_json(rep, true).dump();
  CHECK(pct.find("\"accuracy\":100") != std::string::npos);
}

TEST_CASE("config defaults match the documented constants") {
  RunConfig cfg = default_config();
  CHECK(cfg.metrics.num_bins == 15);
  CHECK(cfg.train.weights.alpha == 0.1);
  CHECK(cfg.train.weights.beta == 0.01);
  CHECK(cfg.train.weights.lambda_margin == 1.0);
  CHECK(cfg.train.weights.lambda_mom == 5.0);
  CHECK(cfg.train.weights.tau == 30.0);
  CHECK(cfg.train.lr == 0.005);
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.train.epochs == 50);
  CHECK(cfg.task.shots == 16);
  CHECK(cfg.task.sigma == 0.6);
  CHECK(cfg.experiment.shots_grid == std::vector<int>{4, 8, 16, 32});
  CHECK(cfg.experiment.templates.size() == 4);
}

TEST_CASE("config parsing rejects unknown keys at every level") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"sneed": 1})"),
                       doctest::Contains("unknown config key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"task": {"nmu_base": 4}})"),
                       doctest::Contains("task.nmu_base"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config(R"({"train": {"lambda_margn": 1.0}})"),
                       doctest::Contains("lambda_margn"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(R"({"metrics": {"bins": 10}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("not json"), std::invalid_argument);
}

TEST_CASE("config canonical form round-trips and hashes stably") {
  RunConfig cfg = default_config();
  cfg.seed = 1234;
  cfg.task.shots = 8;
  cfg.train.weights.lambda_mom = 2.5;
  cfg.train.moment_class_subsample = 4;

  std::string canonical = config_to_json(cfg).dump(2);
  RunConfig reparsed = parse_config(canonical);
  CHECK(config_hash(reparsed) == config_hash(cfg));
  CHECK(reparsed.task.shots == 8);
  CHECK(reparsed.train.weights.lambda_mom == 2.5);
  REQUIRE(reparsed.train.moment_class_subsample.has_value());
  CHECK(*reparsed.train.moment_class_subsample == 4);

  RunConfig other = cfg;
  other.train.lr = 0.004;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("config accepts partial files and fills defaults") {
  RunConfig cfg = parse_config(R"({"seed": 7, "train": {"epochs": 3}})");
  CHECK(cfg.seed == 7);
  CHECK(cfg.train.seed == 7);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.lr == 0.005);
  CHECK(cfg.task.num_base == 8);
}

TEST_CASE("variance convention and scheme names parse both ways") {
  CHECK(parse_bin_scheme("equal_width") == BinScheme::equal_width);
  CHECK(parse_bin_scheme("equal_mass") == BinScheme::equal_mass);
  CHECK_THROWS_AS(parse_bin_scheme("equalwidth"), std::invalid_argument);
  RunConfig cfg = parse_config(R"({"train": {"variance_convention": "sample"}})");
  CHECK(cfg.train.variance_convention == VarianceConvention::sample);
  CHECK_THROWS_AS(parse_config(R"({"train": {"variance_convention": "pop"}})"),
                  std::invalid_argument);
}

TEST_CASE("manifest lists sorted artifacts without timestamps") {
  auto dir = std::filesystem::temp_directory_path() / "calibtune_manifest_test";
  std::filesystem::create_directories(dir);
  write_manifest(dir, "train", "abc123", 9, {"z.csv", "a.json"});
  std::string text = read_text_file(dir / "manifest.json");
  CHECK(text.find("\"a.json\"") < text.find("\"z.csv\""));
  CHECK(text.find("\"version\": \"0.1.0\"") != std::string::npos);
  std::string again = read_text_file(dir / "manifest.json");
  write_manifest(dir, "train", "abc123", 9, {"a.json", "z.csv"});
  CHECK(read_text_file(dir / "manifest.json") == again);
  std::filesystem::remove_all(dir);
}

TEST_CASE("runs csv feeds the correlation analysis") {
  auto path = temp_file("calibtune_test_runs.csv");
  write_text_file(path, "margin_variance,ece\n0.1,0.02\n0.2,0.04\n0.3,0.06\n");
  auto runs = read_runs_csv(path);
  REQUIRE(runs.size() == 3);
  CHECK(runs[1].margin_variance == 0.2);
  std::filesystem::remove(path);
}

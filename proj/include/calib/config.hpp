#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "calib/clip_sim.hpp"
#include "calib/io.hpp"
#include "calib/metrics.hpp"
#include "calib/trainer.hpp"

namespace calib {

struct ExperimentConfig {
  std::vector<int> shots_grid = {4, 8, 16, 32};
  std::vector<std::string> templates = named_templates();
  std::vector<std::uint64_t> seeds;  // explicit list; empty means seed..seed+num_seeds-1
  int num_seeds = 10;
  int eval_per_class = 200;
  std::vector<double> sigma_grid = {0.4, 0.6, 0.8};
};

/// Run configuration tree. Parsing is strict: unknown keys anywhere in the
/// file are errors, so a typoed hyperparameter can never silently fall
/// back to its default.
struct RunConfig {
  std::uint64_t seed = 42;
  TaskConfig task;
  TrainConfig train;
  BinningConfig metrics;
  ExperimentConfig experiment;

  std::vector<std::uint64_t> resolved_seeds() const;
  void validate() const;
};

RunConfig default_config();
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON form (fixed key order, 17-significant-digit reals);
/// parse(canonical(cfg)) == cfg.
JsonValue config_to_json(const RunConfig& cfg);

/// FNV-1a over the canonical form, as a 16-hex-digit string.
std::string config_hash(const RunConfig& cfg);

std::string variance_convention_name(VarianceConvention c);
std::string bin_scheme_name(BinScheme s);
BinScheme parse_bin_scheme(const std::string& s);

}  // namespace calib

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "calib/analysis.hpp"
#include "calib/matrix.hpp"
#include "calib/metrics.hpp"
#include "calib/trainer.hpp"

namespace calib {

/// Minimal ordered JSON value for emission. nlohmann/json reorders object
/// keys and prints shortest-round-trip floats; report files here need a
/// fixed key order and 17-significant-digit reals so that repeated runs
/// are byte-identical.
class JsonValue {
 public:
  static JsonValue null();
  static JsonValue boolean(bool b);
  static JsonValue integer(long long v);
  static JsonValue number(double v);
  static JsonValue string(std::string s);
  static JsonValue array();
  static JsonValue object();

  JsonValue& push(JsonValue v);                      // array append
  JsonValue& set(const std::string& key, JsonValue v);  // object append

  /// Compact single-line form when indent < 0, pretty otherwise.
  std::string dump(int indent = -1) const;

 private:
  enum class Kind { null_v, bool_v, int_v, num_v, str_v, arr_v, obj_v };
  Kind kind_ = Kind::null_v;
  bool bool_ = false;
  long long int_ = 0;
  double num_ = 0.0;
  std::string str_;
  std::vector<JsonValue> arr_;
  std::vector<std::pair<std::string, JsonValue>> obj_;

  void write(std::string& out, int indent, int depth) const;
};

/// %.17g — round-trips any finite double exactly.
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

/// Logits CSV: header `label,z0,...,z{K-1}`, one row per sample, UTF-8,
/// LF line endings. Parse errors carry 1-based line numbers.
LabeledLogits read_logits_csv(const std::filesystem::path& path);
void write_logits_csv(const std::filesystem::path& path, const LabeledLogits& data);

/// Embedding CSV: header `class,e0,...,e{d-1}`, one row per class.
void write_embeddings_csv(const std::filesystem::path& path, const Matrix& embeddings,
                          const std::vector<int>& class_ids);
std::pair<std::vector<int>, Matrix> read_embeddings_csv(const std::filesystem::path& path);

/// Run points for the correlation analysis: header `margin_variance,ece`.
std::vector<RunPoint> read_runs_csv(const std::filesystem::path& path);

JsonValue report_to_json(const CalibrationReport& report, bool percent = false);
JsonValue grad_ratios_to_json(const GradRatioLog& ratios);
JsonValue step_record_to_json(const StepRecord& rec);
JsonValue sweep_to_json(const SweepResult& sweep);
std::string sweep_to_csv(const SweepResult& sweep);

/// Checkpoint: context matrix CSV (`token,p0,...`) plus a JSON sidecar
/// {seed, config_hash, step}.
void write_checkpoint(const std::filesystem::path& csv_path,
                      const std::filesystem::path& json_path, const Matrix& context,
                      std::uint64_t seed, const std::string& config_hash, int step);
Matrix read_checkpoint_context(const std::filesystem::path& csv_path);

void write_trainlog_jsonl(const std::filesystem::path& path, const TrainLog& log);

/// Manifest of one CLI command: {command, config_hash, seed, artifacts,
/// version}. Artifact names are relative and sorted.
void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const std::string& config_hash, std::uint64_t seed,
                    std::vector<std::string> artifacts);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace calib

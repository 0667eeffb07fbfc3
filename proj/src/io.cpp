#include "calib/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace calib {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_real(const std::string& s, std::size_t line_no) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": malformed real '" + s +
                                "'");
  }
  return v;
}

long long parse_int(const std::string& s, std::size_t line_no) {
  errno = 0;
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": malformed integer '" +
                                s + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

JsonValue JsonValue::null() { return {}; }

JsonValue JsonValue::boolean(bool b) {
  JsonValue v;
  v.kind_ = Kind::bool_v;
  v.bool_ = b;
  return v;
}

JsonValue JsonValue::integer(long long i) {
  JsonValue v;
  v.kind_ = Kind::int_v;
  v.int_ = i;
  return v;
}

JsonValue JsonValue::number(double d) {
  JsonValue v;
  v.kind_ = Kind::num_v;
  v.num_ = d;
  return v;
}

JsonValue JsonValue::string(std::string s) {
  JsonValue v;
  v.kind_ = Kind::str_v;
  v.str_ = std::move(s);
  return v;
}

JsonValue JsonValue::array() {
  JsonValue v;
  v.kind_ = Kind::arr_v;
  return v;
}

JsonValue JsonValue::object() {
  JsonValue v;
  v.kind_ = Kind::obj_v;
  return v;
}

JsonValue& JsonValue::push(JsonValue v) {
  arr_.push_back(std::move(v));
  return *this;
}

JsonValue& JsonValue::set(const std::string& key, JsonValue v) {
  obj_.emplace_back(key, std::move(v));
  return *this;
}

void JsonValue::write(std::string& out, int indent, int depth) const {
  auto newline = [&](int d) {
    if (indent < 0) return;
    out.push_back('\n');
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (kind_) {
    case Kind::null_v:
      out += "null";
      break;
    case Kind::bool_v:
      out += bool_ ? "true" : "false";
      break;
    case Kind::int_v:
      out += std::to_string(int_);
      break;
    case Kind::num_v:
      out += std::isfinite(num_) ? format_double(num_) : "null";
      break;
    case Kind::str_v: {
      out.push_back('"');
      for (char c : str_) {
        switch (c) {
          case '"': out += "\\\""; break;
          case '\\': out += "\\\\"; break;
          case '\n': out += "\\n"; break;
          case '\t': out += "\\t"; break;
          case '\r': out += "\\r"; break;
          default:
            if (static_cast<unsigned char>(c) < 0x20) {
              char buf[8];
              std::snprintf(buf, sizeof(buf), "\\u%04x", c);
              out += buf;
            } else {
              out.push_back(c);
            }
        }
      }
      out.push_back('"');
      break;
    }
    case Kind::arr_v: {
      out.push_back('[');
      for (std::size_t i = 0; i < arr_.size(); ++i) {
        if (i) out.push_back(',');
        newline(depth + 1);
        arr_[i].write(out, indent, depth + 1);
      }
      if (!arr_.empty()) newline(depth);
      out.push_back(']');
      break;
    }
    case Kind::obj_v: {
      out.push_back('{');
      for (std::size_t i = 0; i < obj_.size(); ++i) {
        if (i) out.push_back(',');
        newline(depth + 1);
        JsonValue::string(obj_[i].first).write(out, indent, depth + 1);
        out += indent < 0 ? ":" : ": ";
        obj_[i].second.write(out, indent, depth + 1);
      }
      if (!obj_.empty()) newline(depth);
      out.push_back('}');
      break;
    }
  }
}

std::string JsonValue::dump(int indent) const {
  std::string out;
  write(out, indent, 0);
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out << content;
}

LabeledLogits read_logits_csv(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw std::invalid_argument("empty file");
  ++line_no;
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "label")
    throw std::invalid_argument("line 1: expected header label,z0,...");
  for (std::size_t j = 1; j < header.size(); ++j)
    if (header[j] != "z" + std::to_string(j - 1))
      throw std::invalid_argument("line 1: expected column z" + std::to_string(j - 1));
  const std::size_t k = header.size() - 1;

  std::vector<int> labels;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.eof()) break;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != k + 1)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(k + 1) + " fields, got " +
                                  std::to_string(fields.size()));
    long long label = parse_int(fields[0], line_no);
    if (label < 0 || label >= static_cast<long long>(k))
      throw std::invalid_argument("line " + std::to_string(line_no) + ": label out of range");
    labels.push_back(static_cast<int>(label));
    for (std::size_t j = 1; j < fields.size(); ++j)
      values.push_back(parse_real(fields[j], line_no));
  }
  if (labels.empty()) throw std::invalid_argument("no samples");

  LabeledLogits out;
  out.logits = Matrix(labels.size(), k);
  out.logits.data() = std::move(values);
  out.labels = std::move(labels);
  out.validate();
  return out;
}

void write_logits_csv(const std::filesystem::path& path, const LabeledLogits& data) {
  std::string out = "label";
  for (std::size_t j = 0; j < data.num_classes(); ++j) out += ",z" + std::to_string(j);
  out.push_back('\n');
  for (std::size_t i = 0; i < data.num_samples(); ++i) {
    out += std::to_string(data.labels[i]);
    for (std::size_t j = 0; j < data.num_classes(); ++j) {
      out.push_back(',');
      out += format_double(data.logits(i, j));
    }
    out.push_back('\n');
  }
  write_text_file(path, out);
}

void write_embeddings_csv(const std::filesystem::path& path, const Matrix& embeddings,
                          const std::vector<int>& class_ids) {
  std::string out = "class";
  for (std::size_t j = 0; j < embeddings.cols(); ++j) out += ",e" + std::to_string(j);
  out.push_back('\n');
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    out += std::to_string(class_ids[i]);
    for (std::size_t j = 0; j < embeddings.cols(); ++j) {
      out.push_back(',');
      out += format_double(embeddings(i, j));
    }
    out.push_back('\n');
  }
  write_text_file(path, out);
}

std::pair<std::vector<int>, Matrix> read_embeddings_csv(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw std::invalid_argument("empty file");
  ++line_no;
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "class")
    throw std::invalid_argument("line 1: expected header class,e0,...");
  const std::size_t d = header.size() - 1;

  std::vector<int> ids;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.eof()) break;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != d + 1)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": field count mismatch");
    ids.push_back(static_cast<int>(parse_int(fields[0], line_no)));
    for (std::size_t j = 1; j < fields.size(); ++j)
      values.push_back(parse_real(fields[j], line_no));
  }
  if (ids.empty()) throw std::invalid_argument("no rows");

  Matrix m(ids.size(), d);
  m.data() = std::move(values);
  return {std::move(ids), std::move(m)};
}

std::vector<RunPoint> read_runs_csv(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw std::invalid_argument("empty file");
  ++line_no;
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() != 2 || header[0] != "margin_variance" || header[1] != "ece")
    throw std::invalid_argument("line 1: expected header margin_variance,ece");

  std::vector<RunPoint> runs;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.eof()) break;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 2)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 2 fields");
    runs.push_back({parse_real(fields[0], line_no), parse_real(fields[1], line_no)});
  }
  return runs;
}

JsonValue report_to_json(const CalibrationReport& report, bool percent) {
  double scale = percent ? 100.0 : 1.0;
  JsonValue obj = JsonValue::object();
  obj.set("ece", JsonValue::number(report.ece * scale));
  obj.set("mce", JsonValue::number(report.mce * scale));
  obj.set("ace", JsonValue::number(report.ace * scale));
  obj.set("nll", JsonValue::number(report.nll));
  obj.set("accuracy", JsonValue::number(report.accuracy * scale));
  obj.set("mean_confidence", JsonValue::number(report.mean_confidence * scale));
  JsonValue bins = JsonValue::array();
  for (const BinStat& b : report.bins) {
    JsonValue bin = JsonValue::object();
    bin.set("lower", JsonValue::number(b.lower));
    bin.set("upper", JsonValue::number(b.upper));
    bin.set("count", JsonValue::integer(static_cast<long long>(b.count)));
    bin.set("mean_confidence", b.mean_confidence.has_value()
                                   ? JsonValue::number(*b.mean_confidence)
                                   : JsonValue::null());
    bin.set("accuracy",
            b.accuracy.has_value() ? JsonValue::number(*b.accuracy) : JsonValue::null());
    bins.push(std::move(bin));
  }
  obj.set("bins", std::move(bins));
  return obj;
}

JsonValue grad_ratios_to_json(const GradRatioLog& r) {
  JsonValue obj = JsonValue::object();
  obj.set("rho_margin", JsonValue::number(r.rho_margin));
  obj.set("rho_mom", JsonValue::number(r.rho_mom));
  obj.set("rho_mom_over_margin", JsonValue::number(r.rho_mom_over_margin));
  obj.set("rho_margin_over_ce", JsonValue::number(r.rho_margin_over_ce));
  obj.set("rho_mom_over_ce", JsonValue::number(r.rho_mom_over_ce));
  obj.set("epsilon", JsonValue::number(GradRatioLog::epsilon));
  return obj;
}

JsonValue step_record_to_json(const StepRecord& rec) {
  JsonValue obj = JsonValue::object();
  obj.set("step", JsonValue::integer(rec.step));
  obj.set("l_ce", JsonValue::number(rec.l_ce));
  obj.set("l_margin", JsonValue::number(rec.l_margin));
  obj.set("l_mom", JsonValue::number(rec.l_mom));
  obj.set("l_total", JsonValue::number(rec.l_total));
  obj.set("margin_mean", JsonValue::number(rec.margin_mean));
  obj.set("margin_var", JsonValue::number(rec.margin_var));
  obj.set("grad_ratios", grad_ratios_to_json(rec.grad_ratios));
  return obj;
}

JsonValue sweep_to_json(const SweepResult& sweep) {
  JsonValue obj = JsonValue::object();
  obj.set("kind", JsonValue::string(sweep.kind));
  JsonValue records = JsonValue::array();
  for (const SweepRecord& r : sweep.records) {
    JsonValue rec = JsonValue::object();
    rec.set("axis", JsonValue::string(r.axis));
    rec.set("seed", JsonValue::integer(static_cast<long long>(r.seed)));
    rec.set("method", JsonValue::string(r.method));
    rec.set("acc_base", JsonValue::number(r.acc_base));
    rec.set("ece_base", JsonValue::number(r.ece_base));
    rec.set("acc_novel", JsonValue::number(r.acc_novel));
    rec.set("ece_novel", JsonValue::number(r.ece_novel));
    records.push(std::move(rec));
  }
  obj.set("records", std::move(records));
  JsonValue medians = JsonValue::array();
  for (const SweepMedian& m : sweep.medians) {
    JsonValue med = JsonValue::object();
    med.set("axis", JsonValue::string(m.axis));
    med.set("method", JsonValue::string(m.method));
    med.set("acc_base", JsonValue::number(m.acc_base));
    med.set("ece_base", JsonValue::number(m.ece_base));
    med.set("acc_novel", JsonValue::number(m.acc_novel));
    med.set("ece_novel", JsonValue::number(m.ece_novel));
    medians.push(std::move(med));
  }
  obj.set("medians", std::move(medians));
  return obj;
}

std::string sweep_to_csv(const SweepResult& sweep) {
  std::string out = "axis,seed,method,acc_base,ece_base,acc_novel,ece_novel\n";
  for (const SweepRecord& r : sweep.records) {
    out += r.axis + "," + std::to_string(r.seed) + "," + r.method + "," +
           format_double(r.acc_base) + "," + format_double(r.ece_base) + "," +
           format_double(r.acc_novel) + "," + format_double(r.ece_novel) + "\n";
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& csv_path,
                      const std::filesystem::path& json_path, const Matrix& context,
                      std::uint64_t seed, const std::string& config_hash, int step) {
  std::string csv = "token";
  for (std::size_t j = 0; j < context.cols(); ++j) csv += ",p" + std::to_string(j);
  csv.push_back('\n');
  for (std::size_t i = 0; i < context.rows(); ++i) {
    csv += std::to_string(i);
    for (std::size_t j = 0; j < context.cols(); ++j) {
      csv.push_back(',');
      csv += format_double(context(i, j));
    }
    csv.push_back('\n');
  }
  write_text_file(csv_path, csv);

  JsonValue sidecar = JsonValue::object();
  sidecar.set("seed", JsonValue::integer(static_cast<long long>(seed)));
  sidecar.set("config_hash", JsonValue::string(config_hash));
  sidecar.set("step", JsonValue::integer(step));
  write_text_file(json_path, sidecar.dump(2) + "\n");
}

Matrix read_checkpoint_context(const std::filesystem::path& csv_path) {
  std::string text = read_text_file(csv_path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw std::invalid_argument("empty file");
  ++line_no;
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "token")
    throw std::invalid_argument("line 1: expected header token,p0,...");
  const std::size_t d = header.size() - 1;

  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.eof()) break;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != d + 1)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": field count mismatch");
    for (std::size_t j = 1; j < fields.size(); ++j)
      values.push_back(parse_real(fields[j], line_no));
    ++rows;
  }
  Matrix m(rows, d);
  m.data() = std::move(values);
  return m;
}

void write_trainlog_jsonl(const std::filesystem::path& path, const TrainLog& log) {
  std::string out;
  for (const StepRecord& rec : log.steps) {
    out += step_record_to_json(rec).dump();
    out.push_back('\n');
  }
  write_text_file(path, out);
}

void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const std::string& config_hash, std::uint64_t seed,
                    std::vector<std::string> artifacts) {
  std::sort(artifacts.begin(), artifacts.end());
  JsonValue obj = JsonValue::object();
  obj.set("command", JsonValue::string(command));
  obj.set("config_hash", JsonValue::string(config_hash));
  obj.set("seed", JsonValue::integer(static_cast<long long>(seed)));
  JsonValue arr = JsonValue::array();
  for (const std::string& a : artifacts) arr.push(JsonValue::string(a));
  obj.set("artifacts", std::move(arr));
  obj.set("version", JsonValue::string(kVersion));
  write_text_file(dir / "manifest.json", obj.dump(2) + "\n");
}

}  // namespace calib

// calibtune: calibration metrics, prompt-tuning experiments, and analyses
// over deterministic synthetic tasks.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calib/analysis.hpp"
#include "calib/config.hpp"
#include "calib/io.hpp"
#include "calib/trainer.hpp"

namespace fs = std::filesystem;
using namespace calib;

namespace {

std::string defaults_footer() {
  return "Defaults: bins = 15 (equal_width), alpha = 0.1, beta = 0.01, lambda_margin = 1,\n"
         "lambda_mom = 5, tau = 30, lr = 0.005, batch_size = 8, epochs = 50, shots = 16,\n"
         "sigma = 0.6, eval_per_class = 200, num_seeds = 10, temperature search over\n"
         "ln T in [-5, 5]. Metrics are fractions in [0, 1]; --percent displays x100.";
}

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return default_config();
  return load_config(path);
}

std::string fingerprint(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

struct MetricsOpts {
  std::string logits_path;
  int bins = 15;
  std::string scheme = "equal_width";
  bool percent = false;
};

void run_metrics(const MetricsOpts& opt) {
  LabeledLogits data = read_logits_csv(opt.logits_path);
  BinningConfig cfg{opt.bins, parse_bin_scheme(opt.scheme)};
  CalibrationReport report = compute_report(data, cfg);
  std::cout << report_to_json(report, opt.percent).dump(2) << "\n";
}

struct TrainOpts {
  std::string config_path;
  std::string out_dir;
};

void run_train(const TrainOpts& opt) {
  RunConfig cfg = config_or_default(opt.config_path);
  SyntheticTask task = build_task(cfg.task, cfg.seed);
  PromptModel model = make_prompt_model(task);
  TrainLog log = train(model, task, cfg.train);

  fs::path out(opt.out_dir);
  fs::create_directories(out);
  std::string hash = config_hash(cfg);
  write_text_file(out / "config.json", config_to_json(cfg).dump(2) + "\n");
  write_checkpoint(out / "checkpoint.csv", out / "checkpoint.json", model.context, cfg.seed,
                   hash, log.total_steps);
  write_trainlog_jsonl(out / "trainlog.jsonl", log);
  write_manifest(out, "train", hash, cfg.seed,
                 {"config.json", "checkpoint.csv", "checkpoint.json", "trainlog.jsonl"});

  std::cout << "trained " << log.total_steps << " steps; final l_total "
            << format_double(log.final_l_total) << " (l_ce " << format_double(log.final_l_ce)
            << ", l_margin " << format_double(log.final_l_margin) << ", l_mom "
            << format_double(log.final_l_mom) << ")\n";
}

struct EvalOpts {
  std::string checkpoint_dir;
  std::string split = "base";
  std::string out_dir;
};

void run_eval(const EvalOpts& opt) {
  fs::path run_dir(opt.checkpoint_dir);
  RunConfig cfg = load_config(run_dir / "config.json");
  SyntheticTask task = build_task(cfg.task, cfg.seed);
  PromptModel model = make_prompt_model(task);
  model.context = read_checkpoint_context(run_dir / "checkpoint.csv");
  if (model.context.rows() != static_cast<std::size_t>(cfg.task.context_len) ||
      model.context.cols() != static_cast<std::size_t>(cfg.task.token_dim))
    throw std::invalid_argument("checkpoint shape does not match the task config");

  Split split;
  if (opt.split == "base") {
    split = Split::base;
  } else if (opt.split == "novel") {
    split = Split::novel;
  } else {
    throw std::invalid_argument("split must be base or novel");
  }

  EvalResult res = evaluate(model, task, split, cfg.experiment.eval_per_class,
                            derive_seed(cfg.seed, "eval"), cfg.train.weights.tau, cfg.metrics);

  fs::path out(opt.out_dir);
  fs::create_directories(out);
  std::string hash = config_hash(cfg);
  write_text_file(out / "report.json", report_to_json(res.report).dump(2) + "\n");
  write_logits_csv(out / "logits.csv", res.logits);

  std::vector<int> ids =
      split == Split::base ? task.base_class_ids() : task.novel_class_ids();
  write_embeddings_csv(out / "embeddings_tuned.csv", res.tuned_embeddings, ids);
  write_embeddings_csv(out / "embeddings_frozen.csv", res.frozen_embeddings, ids);

  std::string margins_csv = "margin\n";
  for (double m : res.margin_stats.margins) margins_csv += format_double(m) + "\n";
  write_text_file(out / "margins.csv", margins_csv);

  JsonValue summary = JsonValue::object();
  summary.set("split", JsonValue::string(opt.split));
  summary.set("accuracy", JsonValue::number(res.report.accuracy));
  summary.set("ece", JsonValue::number(res.report.ece));
  summary.set("mce", JsonValue::number(res.report.mce));
  summary.set("ace", JsonValue::number(res.report.ace));
  summary.set("nll", JsonValue::number(res.report.nll));
  summary.set("margin_mean", JsonValue::number(res.margin_stats.mean));
  summary.set("margin_variance", JsonValue::number(res.margin_stats.variance));
  summary.set("mean_drift", JsonValue::number(res.mean_drift));
  summary.set("cov_drift", JsonValue::number(res.cov_drift));
  write_text_file(out / "eval_summary.json", summary.dump(2) + "\n");

  write_manifest(out, "eval --split " + opt.split, hash, cfg.seed,
                 {"report.json", "logits.csv", "embeddings_tuned.csv",
                  "embeddings_frozen.csv", "margins.csv", "eval_summary.json"});

  std::cout << opt.split << " split: accuracy " << format_double(res.report.accuracy)
            << ", ece " << format_double(res.report.ece) << ", margin mean "
            << format_double(res.margin_stats.mean) << ", drift "
            << format_double(res.mean_drift + res.cov_drift) << "\n";
}

struct TempScaleOpts {
  std::string val_path;
  std::string test_path;
  int bins = 15;
  bool percent = false;
};

void run_temp_scale(const TempScaleOpts& opt) {
  LabeledLogits val = read_logits_csv(opt.val_path);
  TemperatureFit fit = fit_temperature(val);

  JsonValue out = JsonValue::object();
  out.set("temperature", JsonValue::number(fit.temperature));
  out.set("boundary", JsonValue::boolean(fit.boundary));
  out.set("val_nll_t1", JsonValue::number(fit.nll_at_one));
  out.set("val_nll_fitted", JsonValue::number(fit.nll_at_fit));

  if (!opt.test_path.empty()) {
    LabeledLogits test = read_logits_csv(opt.test_path);
    BinningConfig bins{opt.bins, BinScheme::equal_width};
    CalibrationReport before = compute_report(test, bins);
    LabeledLogits scaled = test;
    for (double& v : scaled.logits.data()) v /= fit.temperature;
    CalibrationReport after = compute_report(scaled, bins);
    out.set("test_before", report_to_json(before, opt.percent));
    out.set("test_after", report_to_json(after, opt.percent));
  }
  std::cout << out.dump(2) << "\n";
}

struct AnalyzeOpts {
  std::string kind;
  std::string logits_path;
  std::string runs_path;
  std::string tuned_path;
  std::string frozen_path;
  std::string out_dir;
  int bins = 15;
  bool use_spearman = false;
};

void run_analyze(const AnalyzeOpts& opt) {
  fs::path out(opt.out_dir);
  fs::create_directories(out);
  JsonValue json = JsonValue::object();
  std::string csv;
  std::string input_fingerprint;

  if (opt.kind == "ecdf") {
    if (opt.logits_path.empty()) throw std::invalid_argument("ecdf needs --logits");
    std::string raw = read_text_file(opt.logits_path);
    input_fingerprint = fingerprint(raw);
    LabeledLogits data = read_logits_csv(opt.logits_path);
    MarginStats st = margins(data);
    EcdfSeries series = margin_ecdf(st.margins);
    BoxStats box = box_stats(st.margins);

    json.set("kind", JsonValue::string("ecdf"));
    json.set("count", JsonValue::integer(static_cast<long long>(series.values.size())));
    JsonValue boxj = JsonValue::object();
    boxj.set("median", JsonValue::number(box.median));
    boxj.set("q1", JsonValue::number(box.q1));
    boxj.set("q3", JsonValue::number(box.q3));
    boxj.set("iqr", JsonValue::number(box.iqr));
    json.set("box", std::move(boxj));
    json.set("margin_mean", JsonValue::number(st.mean));
    json.set("margin_variance", JsonValue::number(st.variance));
    JsonValue pts = JsonValue::array();
    for (std::size_t i = 0; i < series.values.size(); ++i) {
      JsonValue p = JsonValue::object();
      p.set("value", JsonValue::number(series.values[i]));
      p.set("fraction", JsonValue::number(series.fractions[i]));
      pts.push(std::move(p));
    }
    json.set("points", std::move(pts));

    csv = "value,fraction\n";
    for (std::size_t i = 0; i < series.values.size(); ++i)
      csv += format_double(series.values[i]) + "," + format_double(series.fractions[i]) + "\n";
  } else if (opt.kind == "errors") {
    if (opt.logits_path.empty()) throw std::invalid_argument("errors needs --logits");
    std::string raw = read_text_file(opt.logits_path);
    input_fingerprint = fingerprint(raw);
    LabeledLogits data = read_logits_csv(opt.logits_path);
    Matrix probs = softmax(data.logits);
    auto counts = error_confidence_histogram(probs, data.labels, opt.bins);

    json.set("kind", JsonValue::string("errors"));
    json.set("num_bins", JsonValue::integer(opt.bins));
    JsonValue arr = JsonValue::array();
    csv = "lower,upper,errors\n";
    for (std::size_t b = 0; b < counts.size(); ++b) {
      double lo = static_cast<double>(b) / opt.bins;
      double hi = static_cast<double>(b + 1) / opt.bins;
      JsonValue bin = JsonValue::object();
      bin.set("lower", JsonValue::number(lo));
      bin.set("upper", JsonValue::number(hi));
      bin.set("errors", JsonValue::integer(static_cast<long long>(counts[b])));
      arr.push(std::move(bin));
      csv += format_double(lo) + "," + format_double(hi) + "," + std::to_string(counts[b]) +
             "\n";
    }
    json.set("bins", std::move(arr));
  } else if (opt.kind == "correlation") {
    if (opt.runs_path.empty()) throw std::invalid_argument("correlation needs --runs");
    std::string raw = read_text_file(opt.runs_path);
    input_fingerprint = fingerprint(raw);
    auto runs = read_runs_csv(opt.runs_path);
    double r = variability_ece_correlation(runs, opt.use_spearman);

    json.set("kind", JsonValue::string("correlation"));
    json.set("method", JsonValue::string(opt.use_spearman ? "spearman" : "pearson"));
    json.set("n", JsonValue::integer(static_cast<long long>(runs.size())));
    json.set("r", JsonValue::number(r));
    csv = "method,n,r\n";
    csv += std::string(opt.use_spearman ? "spearman" : "pearson") + "," +
           std::to_string(runs.size()) + "," + format_double(r) + "\n";
  } else if (opt.kind == "moments") {
    if (opt.tuned_path.empty() || opt.frozen_path.empty())
      throw std::invalid_argument("moments needs --tuned and --frozen");
    std::string raw = read_text_file(opt.tuned_path) + read_text_file(opt.frozen_path);
    input_fingerprint = fingerprint(raw);
    auto [tuned_ids, tuned] = read_embeddings_csv(opt.tuned_path);
    auto [frozen_ids, frozen] = read_embeddings_csv(opt.frozen_path);
    if (tuned_ids != frozen_ids)
      throw std::invalid_argument("tuned/frozen class id mismatch");
    MomentLossParts parts = moment_loss_parts(tuned, frozen);

    json.set("kind", JsonValue::string("moments"));
    json.set("classes", JsonValue::integer(static_cast<long long>(tuned_ids.size())));
    json.set("mean_drift", JsonValue::number(parts.mean_term.value));
    json.set("cov_drift", JsonValue::number(parts.cov_term.value));
    json.set("total", JsonValue::number(parts.mean_term.value + parts.cov_term.value));
    csv = "mean_drift,cov_drift,total\n";
    csv += format_double(parts.mean_term.value) + "," + format_double(parts.cov_term.value) +
           "," + format_double(parts.mean_term.value + parts.cov_term.value) + "\n";
  } else {
    throw std::invalid_argument("unknown analysis kind: " + opt.kind);
  }

  write_text_file(out / (opt.kind + ".json"), json.dump(2) + "\n");
  write_text_file(out / (opt.kind + ".csv"), csv);
  write_manifest(out, "analyze --kind " + opt.kind, input_fingerprint, 0,
                 {opt.kind + ".json", opt.kind + ".csv"});
  std::cout << "wrote " << (out / (opt.kind + ".json")).string() << "\n";
}

struct ExperimentOpts {
  std::string kind;
  std::string config_path;
  std::string out_dir;
};

void print_medians(const SweepResult& result) {
  std::printf("%-24s %-14s %9s %9s %9s %9s\n", "axis", "method", "acc_base", "ece_base",
              "acc_novel", "ece_novel");
  for (const SweepMedian& m : result.medians)
    std::printf("%-24s %-14s %9.4f %9.4f %9.4f %9.4f\n", m.axis.c_str(), m.method.c_str(),
                m.acc_base, m.ece_base, m.acc_novel, m.ece_novel);
}

void run_experiment(const ExperimentOpts& opt) {
  RunConfig cfg = config_or_default(opt.config_path);
  std::vector<std::uint64_t> seeds = cfg.resolved_seeds();
  SweepSettings settings{cfg.experiment.eval_per_class, cfg.metrics};

  SweepResult result;
  if (opt.kind == "shots") {
    result = shots_sweep(cfg.task, cfg.train, cfg.experiment.shots_grid, seeds, settings);
  } else if (opt.kind == "init") {
    result =
        init_robustness_sweep(cfg.task, cfg.train, cfg.experiment.templates, seeds, settings);
  } else if (opt.kind == "ablation") {
    result = ablation_suite(cfg.task, cfg.train, seeds, settings);
  } else {
    throw std::invalid_argument("unknown experiment kind: " + opt.kind);
  }

  fs::path out(opt.out_dir);
  fs::create_directories(out);
  std::string hash = config_hash(cfg);
  write_text_file(out / "config.json", config_to_json(cfg).dump(2) + "\n");
  write_text_file(out / (opt.kind + ".json"), sweep_to_json(result).dump(2) + "\n");
  write_text_file(out / (opt.kind + ".csv"), sweep_to_csv(result));
  write_manifest(out, "experiment --kind " + opt.kind, hash, cfg.seed,
                 {"config.json", opt.kind + ".json", opt.kind + ".csv"});
  print_medians(result);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibtune: calibration-aware prompt tuning on synthetic tasks"};
  app.footer(defaults_footer());
  app.require_subcommand(1);

  MetricsOpts metrics_opts;
  CLI::App* metrics_cmd =
      app.add_subcommand("metrics", "Calibration report for a logits CSV file");
  metrics_cmd->add_option("--logits", metrics_opts.logits_path, "logits CSV (label,z0,...)")
      ->required();
  metrics_cmd->add_option("--bins", metrics_opts.bins, "number of confidence bins")
      ->default_val(15);
  metrics_cmd->add_option("--scheme", metrics_opts.scheme, "equal_width or equal_mass")
      ->default_val("equal_width");
  metrics_cmd->add_flag("--percent", metrics_opts.percent, "display fraction metrics x100");

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "Train prompt context on a synthetic task");
  train_cmd->add_option("--config", train_opts.config_path, "run config JSON");
  train_cmd->add_option("--out", train_opts.out_dir, "output directory")->required();

  EvalOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint_dir, "run directory from train")
      ->required();
  eval_cmd->add_option("--split", eval_opts.split, "base or novel")->required();
  eval_cmd->add_option("--out", eval_opts.out_dir, "output directory")->required();

  TempScaleOpts temp_opts;
  CLI::App* temp_cmd =
      app.add_subcommand("temp-scale", "Fit a temperature on validation logits");
  temp_cmd->add_option("--val", temp_opts.val_path, "validation logits CSV")->required();
  temp_cmd->add_option("--test", temp_opts.test_path, "test logits CSV (optional)");
  temp_cmd->add_option("--bins", temp_opts.bins, "bins for the test reports")->default_val(15);
  temp_cmd->add_flag("--percent", temp_opts.percent, "display fraction metrics x100");

  AnalyzeOpts analyze_opts;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "Post-hoc analyses");
  analyze_cmd
      ->add_option("--kind", analyze_opts.kind, "ecdf | errors | correlation | moments")
      ->required();
  analyze_cmd->add_option("--logits", analyze_opts.logits_path, "logits CSV input");
  analyze_cmd->add_option("--runs", analyze_opts.runs_path,
                          "runs CSV input (margin_variance,ece)");
  analyze_cmd->add_option("--tuned", analyze_opts.tuned_path, "tuned embeddings CSV");
  analyze_cmd->add_option("--frozen", analyze_opts.frozen_path, "frozen embeddings CSV");
  analyze_cmd->add_option("--out", analyze_opts.out_dir, "output directory")->required();
  analyze_cmd->add_option("--bins", analyze_opts.bins, "bins for the errors histogram")
      ->default_val(15);
  analyze_cmd->add_flag("--spearman", analyze_opts.use_spearman,
                        "rank correlation instead of Pearson");

  ExperimentOpts exp_opts;
  CLI::App* exp_cmd = app.add_subcommand("experiment", "Multi-seed sweep experiments");
  exp_cmd->add_option("--kind", exp_opts.kind, "shots | init | ablation")->required();
  exp_cmd->add_option("--config", exp_opts.config_path, "run config JSON");
  exp_cmd->add_option("--out", exp_opts.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(metrics_cmd)) run_metrics(metrics_opts);
    if (app.got_subcommand(train_cmd)) run_train(train_opts);
    if (app.got_subcommand(eval_cmd)) run_eval(eval_opts);
    if (app.got_subcommand(temp_cmd)) run_temp_scale(temp_opts);
    if (app.got_subcommand(analyze_cmd)) run_analyze(analyze_opts);
    if (app.got_subcommand(exp_cmd)) run_experiment(exp_opts);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

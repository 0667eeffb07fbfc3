// Python bindings for the core operations: metrics, losses, synthetic
// tasks, training, and evaluation. Matrices cross the boundary as
// float64 numpy arrays.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "calib/analysis.hpp"
#include "calib/config.hpp"
#include "calib/trainer.hpp"

namespace py = pybind11;
using namespace calib;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), m.data().begin());
  return m;
}

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> arr({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), arr.mutable_data());
  return arr;
}

py::dict report_dict(const CalibrationReport& rep) {
  py::dict d;
  d["ece"] = rep.ece;
  d["mce"] = rep.mce;
  d["ace"] = rep.ace;
  d["nll"] = rep.nll;
  d["accuracy"] = rep.accuracy;
  d["mean_confidence"] = rep.mean_confidence;
  py::list bins;
  for (const BinStat& b : rep.bins) {
    py::dict bin;
    bin["lower"] = b.lower;
    bin["upper"] = b.upper;
    bin["count"] = b.count;
    bin["mean_confidence"] =
        b.mean_confidence.has_value() ? py::cast(*b.mean_confidence) : py::none();
    bin["accuracy"] = b.accuracy.has_value() ? py::cast(*b.accuracy) : py::none();
    bins.append(bin);
  }
  d["bins"] = bins;
  return d;
}

BinningConfig binning_from(int num_bins, const std::string& scheme) {
  return {num_bins, parse_bin_scheme(scheme)};
}

TaskConfig task_config_from(const py::dict& kwargs) {
  TaskConfig cfg;
  for (auto item : kwargs) {
    std::string key = py::cast<std::string>(item.first);
    if (key == "num_base") cfg.num_base = py::cast<int>(item.second);
    else if (key == "num_novel") cfg.num_novel = py::cast<int>(item.second);
    else if (key == "token_dim") cfg.token_dim = py::cast<int>(item.second);
    else if (key == "hidden_dim") cfg.hidden_dim = py::cast<int>(item.second);
    else if (key == "embed_dim") cfg.embed_dim = py::cast<int>(item.second);
    else if (key == "context_len") cfg.context_len = py::cast<int>(item.second);
    else if (key == "shots") cfg.shots = py::cast<int>(item.second);
    else if (key == "sigma") cfg.sigma = py::cast<double>(item.second);
    else if (key == "prompt_template") cfg.prompt_template = py::cast<std::string>(item.second);
    else throw std::invalid_argument("unknown task config key: " + key);
  }
  return cfg;
}

TrainConfig train_config_from(const py::dict& kwargs) {
  TrainConfig cfg;
  for (auto item : kwargs) {
    std::string key = py::cast<std::string>(item.first);
    if (key == "alpha") cfg.weights.alpha = py::cast<double>(item.second);
    else if (key == "beta") cfg.weights.beta = py::cast<double>(item.second);
    else if (key == "lambda_margin") cfg.weights.lambda_margin = py::cast<double>(item.second);
    else if (key == "lambda_mom") cfg.weights.lambda_mom = py::cast<double>(item.second);
    else if (key == "tau") cfg.weights.tau = py::cast<double>(item.second);
    else if (key == "lambda_l1") cfg.weights.lambda_l1 = py::cast<double>(item.second);
    else if (key == "mbls_weight") cfg.weights.mbls_weight = py::cast<double>(item.second);
    else if (key == "mbls_cap") cfg.weights.mbls_cap = py::cast<double>(item.second);
    else if (key == "lr") cfg.lr = py::cast<double>(item.second);
    else if (key == "batch_size") cfg.batch_size = py::cast<int>(item.second);
    else if (key == "epochs") cfg.epochs = py::cast<int>(item.second);
    else if (key == "seed") cfg.seed = py::cast<std::uint64_t>(item.second);
    else if (key == "variance_convention") {
      std::string conv = py::cast<std::string>(item.second);
      if (conv == "population") cfg.variance_convention = VarianceConvention::population;
      else if (conv == "sample") cfg.variance_convention = VarianceConvention::sample;
      else throw std::invalid_argument("unknown variance_convention: " + conv);
    } else if (key == "moment_class_subsample") {
      cfg.moment_class_subsample = py::cast<int>(item.second);
    } else if (key == "normalize_embeddings") {
      cfg.normalize_embeddings = py::cast<bool>(item.second);
    } else {
      throw std::invalid_argument("unknown train config key: " + key);
    }
  }
  return cfg;
}

py::dict eval_dict(const EvalResult& res) {
  py::dict d;
  d["report"] = report_dict(res.report);
  d["margins"] = py::cast(res.margin_stats.margins);
  d["margin_mean"] = res.margin_stats.mean;
  d["margin_variance"] = res.margin_stats.variance;
  d["mean_drift"] = res.mean_drift;
  d["cov_drift"] = res.cov_drift;
  d["logits"] = to_numpy(res.logits.logits);
  d["labels"] = py::cast(res.logits.labels);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Calibration metrics and margin/moment-regularized prompt tuning";
  m.attr("__version__") = kVersion;

  m.def("softmax", [](py::array_t<double> logits) { return to_numpy(softmax(to_matrix(logits))); },
        py::arg("logits"));

  m.def(
      "compute_report",
      [](py::array_t<double> logits, std::vector<int> labels, int num_bins,
         const std::string& scheme) {
        return report_dict(compute_report({to_matrix(logits), std::move(labels)},
                                          binning_from(num_bins, scheme)));
      },
      py::arg("logits"), py::arg("labels"), py::arg("num_bins") = 15,
      py::arg("scheme") = "equal_width");

  m.def(
      "fit_temperature",
      [](py::array_t<double> logits, std::vector<int> labels) {
        TemperatureFit fit = fit_temperature({to_matrix(logits), std::move(labels)});
        py::dict d;
        d["temperature"] = fit.temperature;
        d["boundary"] = fit.boundary;
        d["nll_at_one"] = fit.nll_at_one;
        d["nll_at_fit"] = fit.nll_at_fit;
        return d;
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "cosine_logits",
      [](py::array_t<double> feats, py::array_t<double> embs, double tau) {
        return to_numpy(cosine_logits(to_matrix(feats), to_matrix(embs), tau));
      },
      py::arg("image_feats"), py::arg("class_embs"), py::arg("tau") = 30.0);

  m.def(
      "cross_entropy",
      [](py::array_t<double> logits, std::vector<int> labels) {
        LossValueGrad out = cross_entropy({to_matrix(logits), std::move(labels)});
        return py::make_tuple(out.value, to_numpy(out.grad));
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "margins",
      [](py::array_t<double> logits, std::vector<int> labels, const std::string& convention) {
        VarianceConvention conv = convention == "sample" ? VarianceConvention::sample
                                                         : VarianceConvention::population;
        MarginStats st = margins({to_matrix(logits), std::move(labels)}, conv);
        py::dict d;
        d["margins"] = py::cast(st.margins);
        d["mean"] = st.mean;
        d["variance"] = st.variance;
        d["competitor"] = py::cast(st.competitor);
        return d;
      },
      py::arg("logits"), py::arg("labels"), py::arg("variance_convention") = "population");

  m.def(
      "margin_loss",
      [](py::array_t<double> logits, std::vector<int> labels, double alpha, double beta) {
        LossValueGrad out = margin_loss(margins({to_matrix(logits), std::move(labels)}), alpha, beta);
        return py::make_tuple(out.value, to_numpy(out.grad));
      },
      py::arg("logits"), py::arg("labels"), py::arg("alpha") = 0.1, py::arg("beta") = 0.01);

  m.def(
      "moment_summary",
      [](py::array_t<double> embs) {
        MomentSummary ms = moment_summary(to_matrix(embs));
        Matrix mean(1, ms.mean.size());
        mean.data() = ms.mean;
        return py::make_tuple(to_numpy(mean), to_numpy(ms.covariance));
      },
      py::arg("embeddings"));

  m.def(
      "moment_loss",
      [](py::array_t<double> tuned, py::array_t<double> frozen) {
        LossValueGrad out = moment_loss(to_matrix(tuned), to_matrix(frozen));
        return py::make_tuple(out.value, to_numpy(out.grad));
      },
      py::arg("tuned"), py::arg("frozen"));

  m.def(
      "l1_align_loss",
      [](py::array_t<double> tuned, py::array_t<double> frozen) {
        LossValueGrad out = l1_align_loss(to_matrix(tuned), to_matrix(frozen));
        return py::make_tuple(out.value, to_numpy(out.grad));
      },
      py::arg("tuned"), py::arg("frozen"));

  m.def(
      "mbls_loss",
      [](py::array_t<double> logits, double margin_cap, double weight) {
        LossValueGrad out = mbls_loss(to_matrix(logits), margin_cap, weight);
        return py::make_tuple(out.value, to_numpy(out.grad));
      },
      py::arg("logits"), py::arg("margin_cap") = 10.0, py::arg("weight") = 0.1);

  m.def(
      "margin_ecdf",
      [](std::vector<double> values) {
        EcdfSeries s = margin_ecdf(values);
        BoxStats box = box_stats(values);
        py::dict d;
        d["values"] = py::cast(s.values);
        d["fractions"] = py::cast(s.fractions);
        d["median"] = box.median;
        d["q1"] = box.q1;
        d["q3"] = box.q3;
        d["iqr"] = box.iqr;
        return d;
      },
      py::arg("margins"));

  m.def(
      "pearson",
      [](std::vector<double> xs, std::vector<double> ys) { return pearson(xs, ys); },
      py::arg("xs"), py::arg("ys"));

  py::class_<SyntheticTask>(m, "SyntheticTask")
      .def_property_readonly("num_base", [](const SyntheticTask& t) { return t.cfg.num_base; })
      .def_property_readonly("num_novel",
                             [](const SyntheticTask& t) { return t.cfg.num_novel; })
      .def_property_readonly("anchors",
                             [](const SyntheticTask& t) { return to_numpy(t.anchors); })
      .def_property_readonly("seed", [](const SyntheticTask& t) { return t.seed; });

  py::class_<PromptModel>(m, "PromptModel")
      .def_property_readonly("context",
                             [](const PromptModel& m_) { return to_numpy(m_.context); });

  m.def(
      "build_task",
      [](std::uint64_t seed, const py::kwargs& kwargs) {
        return build_task(task_config_from(kwargs), seed);
      },
      py::arg("seed"), py::return_value_policy::move);

  m.def(
      "make_prompt_model",
      [](const SyntheticTask& task, const std::string& init_template) {
        return init_template.empty() ? make_prompt_model(task)
                                     : make_prompt_model(task, init_template);
      },
      py::arg("task"), py::arg("init_template") = "", py::keep_alive<0, 1>());

  m.def(
      "sample_images",
      [](const SyntheticTask& task, std::vector<int> class_ids, int per_class, double sigma,
         std::uint64_t seed) {
        ImageBatch batch = sample_images(task, class_ids, per_class, sigma, seed);
        return py::make_tuple(to_numpy(batch.features), py::cast(batch.labels));
      },
      py::arg("task"), py::arg("class_ids"), py::arg("per_class"), py::arg("sigma"),
      py::arg("seed"));

  m.def(
      "train",
      [](PromptModel& model, const SyntheticTask& task, const py::kwargs& kwargs) {
        TrainLog log = train(model, task, train_config_from(kwargs));
        py::list steps;
        for (const StepRecord& r : log.steps) {
          py::dict rec;
          rec["step"] = r.step;
          rec["l_ce"] = r.l_ce;
          rec["l_margin"] = r.l_margin;
          rec["l_mom"] = r.l_mom;
          rec["l_total"] = r.l_total;
          rec["margin_mean"] = r.margin_mean;
          rec["margin_var"] = r.margin_var;
          rec["rho_margin"] = r.grad_ratios.rho_margin;
          rec["rho_mom"] = r.grad_ratios.rho_mom;
          steps.append(rec);
        }
        py::dict d;
        d["steps"] = steps;
        d["total_steps"] = log.total_steps;
        d["final_l_total"] = log.final_l_total;
        return d;
      },
      py::arg("model"), py::arg("task"));

  m.def(
      "gradient_check",
      [](const PromptModel& model, const SyntheticTask& task, double h,
         const py::kwargs& kwargs) {
        GradCheckReport rep = gradient_check(model, task, train_config_from(kwargs), h);
        py::dict d;
        d["max_rel_error"] = rep.max_rel_error;
        d["mean_rel_error"] = rep.mean_rel_error;
        d["num_params"] = rep.num_params;
        return d;
      },
      py::arg("model"), py::arg("task"), py::arg("h") = 1e-5);

  m.def(
      "evaluate",
      [](const PromptModel& model, const SyntheticTask& task, const std::string& split,
         int per_class, std::uint64_t seed, double tau) {
        Split s = split == "novel" ? Split::novel : Split::base;
        return eval_dict(evaluate(model, task, s, per_class, seed, tau));
      },
      py::arg("model"), py::arg("task"), py::arg("split"), py::arg("per_class") = 200,
      py::arg("seed") = 0, py::arg("tau") = 30.0);
}

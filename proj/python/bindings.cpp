#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "relureduce/builders.hpp"
#include "relureduce/checkpoint.hpp"
#include "relureduce/config.hpp"
#include "relureduce/criticality.hpp"
#include "relureduce/dataset.hpp"
#include "relureduce/engine.hpp"
#include "relureduce/errors.hpp"
#include "relureduce/merge.hpp"
#include "relureduce/passes.hpp"
#include "relureduce/pipeline.hpp"
#include "relureduce/profile.hpp"

namespace py = pybind11;
using namespace relureduce;

namespace {

ReduceStep make_step(const std::vector<std::string>& culled,
                     const std::vector<std::string>& thinned, const std::string& parity,
                     double alpha, double rho) {
  return {culled, thinned, parity, alpha, rho};
}

py::dict count_dict(const CountReport& rep) {
  py::dict d;
  d["total"] = rep.total;
  py::list stages;
  for (const auto& [stage, count] : rep.per_stage) stages.append(py::make_tuple(stage, count));
  d["per_stage"] = stages;
  return d;
}

std::vector<StageMeasurement> to_measurements(
    const std::vector<std::tuple<std::string, double, double, double>>& rows) {
  std::vector<StageMeasurement> ms;
  for (const auto& [stage, kilo, wo, w] : rows) ms.push_back({stage, kilo, wo, w});
  return ms;
}

py::dict report_dict(const CriticalityReport& rep) {
  py::dict d;
  py::list scores;
  for (const auto& s : rep.scores) scores.append(py::make_tuple(s.stage, s.relu_kilo, s.score));
  d["scores"] = scores;
  d["order"] = rep.order;
  d["most_critical"] = rep.most_critical;
  d["w"] = rep.w;
  return d;
}

py::list history_list(const TrainResult& tr) {
  py::list hist;
  for (const auto& e : tr.history)
    hist.append(py::make_tuple(e.epoch, e.lr, e.train_loss, e.train_acc, e.val_acc));
  return hist;
}

py::dict pipeline_dict(const PipelineResult& res) {
  py::dict d;
  d["teacher_accuracy"] = res.teacher_accuracy;
  d["order"] = res.criticality.order;
  d["most_critical"] = res.criticality.most_critical;
  d["candidates"] = res.candidates;
  d["pareto"] = res.pareto;
  d["candidates_csv"] = pareto_csv(res.candidates);
  d["pareto_csv"] = pareto_csv(res.pareto);
  d["criticality_csv"] = criticality_csv(res.criticality);
  py::list training;
  for (const auto& tr : res.candidate_training) training.append(history_list(tr));
  d["candidate_training"] = training;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ReLU-budget reduction toolkit: graph passes, criticality, pipeline, merging";

  py::register_exception<config_error>(m, "ConfigError");
  py::register_exception<build_error>(m, "BuildError");
  py::register_exception<training_error>(m, "TrainingError");
  py::register_exception<equivalence_error>(m, "EquivalenceError");

  py::class_<NetworkGraph>(m, "Graph")
      .def_property_readonly("family", [](const NetworkGraph& g) { return g.family; })
      .def_property_readonly("num_nodes",
                             [](const NetworkGraph& g) { return g.nodes.size(); })
      .def("__repr__", [](const NetworkGraph& g) {
        return "<Graph " + (g.family.empty() ? "custom" : g.family) + ", " +
               std::to_string(count_relus(g).total) + " relus>";
      });

  py::class_<ModelF>(m, "Model")
      .def_property_readonly("graph", [](const ModelF& m_) { return m_.graph; })
      .def("__repr__", [](const ModelF& m_) {
        return "<Model " + std::to_string(m_.weights.size()) + " tensors>";
      });

  py::class_<LatencyModel>(m, "LatencyModel")
      .def_readonly("slope", &LatencyModel::slope)
      .def_readonly("intercept", &LatencyModel::intercept)
      .def_readonly("r_squared", &LatencyModel::r_squared)
      .def_readonly("fit_points", &LatencyModel::fit_points)
      .def("__repr__", [](const LatencyModel& lm) {
        return "<LatencyModel slope=" + std::to_string(lm.slope) +
               " intercept=" + std::to_string(lm.intercept) + ">";
      });

  py::class_<CandidatePoint>(m, "CandidatePoint")
      .def_property_readonly("culled", [](const CandidatePoint& c) { return c.step.culled; })
      .def_property_readonly("thinned", [](const CandidatePoint& c) { return c.step.thinned; })
      .def_property_readonly("alpha", [](const CandidatePoint& c) { return c.step.alpha; })
      .def_property_readonly("rho", [](const CandidatePoint& c) { return c.step.rho; })
      .def_property_readonly("label", [](const CandidatePoint& c) { return step_label(c.step); })
      .def_readonly("relu_count", &CandidatePoint::relu_count)
      .def_readonly("accuracy", &CandidatePoint::accuracy)
      .def_readonly("latency_est", &CandidatePoint::latency_est)
      .def_readonly("acc_per_kilorelu", &CandidatePoint::acc_per_kilorelu)
      .def("__repr__", [](const CandidatePoint& c) {
        return "<CandidatePoint " + step_label(c.step) + ", " +
               std::to_string(c.relu_count) + " relus>";
      });

  // ---- builders and profiling
  m.def(
      "build_architecture",
      [](const std::string& family, int input, int channels, int classes,
         bool strip_residuals, double alpha, double rho) {
        return build_architecture(
            {family, input, channels, classes, strip_residuals, alpha, rho});
      },
      py::arg("family"), py::arg("input") = 32, py::arg("channels") = 3,
      py::arg("classes") = 10, py::arg("strip_residuals") = false, py::arg("alpha") = 1.0,
      py::arg("rho") = 1.0);
  m.def("count_relus", [](const NetworkGraph& g) { return count_dict(count_relus(g)); });
  m.def("count_flops", [](const NetworkGraph& g) { return count_dict(count_flops(g)); });
  m.def("count_params", [](const NetworkGraph& g) { return count_dict(count_params(g)); });
  m.def("stage_summary", [](const NetworkGraph& g) {
    py::list rows;
    for (const auto& r : stage_summary(g))
      rows.append(py::make_tuple(r.stage, r.relus, r.flops, r.params));
    return rows;
  });
  m.def("stages", [](const NetworkGraph& g) {
    std::vector<std::string> names;
    for (const auto& [name, ids] : stage_view(g).stages) names.push_back(name);
    return names;
  });
  m.def("conv_count", &conv_count);

  // ---- reduction passes
  m.def("cull", &cull, py::arg("graph"), py::arg("stages"));
  m.def("thin", &thin, py::arg("graph"), py::arg("stages"), py::arg("parity") = "keep-odd");
  m.def("reshape", &reshape, py::arg("graph"), py::arg("alpha"), py::arg("rho") = 1.0);
  m.def(
      "apply_reduce_step",
      [](const NetworkGraph& g, const std::vector<std::string>& culled,
         const std::vector<std::string>& thinned, const std::string& parity, double alpha,
         double rho) {
        return apply_reduce_step(g, make_step(culled, thinned, parity, alpha, rho));
      },
      py::arg("graph"), py::arg("culled") = std::vector<std::string>{},
      py::arg("thinned") = std::vector<std::string>{}, py::arg("parity") = "keep-odd",
      py::arg("alpha") = 1.0, py::arg("rho") = 1.0);
  m.def(
      "step_label",
      [](const std::vector<std::string>& culled, const std::vector<std::string>& thinned,
         const std::string& parity, double alpha, double rho) {
        return step_label(make_step(culled, thinned, parity, alpha, rho));
      },
      py::arg("culled") = std::vector<std::string>{},
      py::arg("thinned") = std::vector<std::string>{}, py::arg("parity") = "keep-odd",
      py::arg("alpha") = 1.0, py::arg("rho") = 1.0);

  // ---- criticality
  m.def("probe_networks", &probe_networks);
  m.def(
      "criticality_scores",
      [](const std::vector<std::tuple<std::string, double, double, double>>& rows, double w) {
        return report_dict(criticality_scores(to_measurements(rows), w));
      },
      py::arg("measurements"), py::arg("w") = 0.07,
      "measurements: (stage, relu_kilo, acc_without_kd, acc_with_kd) tuples");
  m.def("measurements_from_csv", [](const std::string& csv) {
    std::vector<std::tuple<std::string, double, double, double>> rows;
    for (const auto& ms : measurements_from_csv(csv))
      rows.emplace_back(ms.stage, ms.relu_kilo, ms.acc_without_kd, ms.acc_with_kd);
    return rows;
  });
  m.def(
      "criticality_csv",
      [](const std::vector<std::tuple<std::string, double, double, double>>& rows, double w) {
        return criticality_csv(criticality_scores(to_measurements(rows), w));
      },
      py::arg("measurements"), py::arg("w") = 0.07);

  // ---- latency model and pareto selection
  m.def(
      "fit_latency_model",
      [](const std::optional<std::vector<std::pair<double, double>>>& points) {
        return fit_latency_model(points ? *points : default_latency_points());
      },
      py::arg("points") = py::none());
  m.def("default_latency_points", [] { return default_latency_points(); });
  m.def("estimate_latency", &estimate_latency, py::arg("model"), py::arg("kilo_relus"));
  m.def("acc_per_kilorelu", &acc_per_kilorelu, py::arg("accuracy"), py::arg("relu_count"));
  m.def("pareto_front", &pareto_front, py::arg("candidates"));
  m.def("candidates_from_csv", &candidates_from_csv, py::arg("csv"), py::arg("model"));
  m.def("pareto_csv", &pareto_csv, py::arg("candidates"));

  // ---- pipeline (config text shares the CLI's json schema)
  m.def(
      "run_deepreduce",
      [](const std::string& config_json,
         const std::vector<std::tuple<std::string, double, double, double>>& measurements,
         const std::map<std::string, double>& accuracy_table) {
        const RunConfig cfg = config_from_json(config_json);
        PipelineInputs inputs;
        inputs.measurements = to_measurements(measurements);
        inputs.accuracy_table = accuracy_table;
        if (inputs.accuracy_table.empty() || inputs.measurements.empty())
          inputs.data = ingest_dataset(cfg.data);
        return pipeline_dict(run_deepreduce(pipeline_config(cfg), inputs));
      },
      py::arg("config_json") = "{}",
      py::arg("measurements") = std::vector<std::tuple<std::string, double, double, double>>{},
      py::arg("accuracy_table") = std::map<std::string, double>{},
      "accuracy_table keys follow candidate_key: 'S1+S4|S2+S3|<alpha>|<rho>' (labels sorted)");
  m.def(
      "candidate_key",
      [](const std::vector<std::string>& culled, const std::vector<std::string>& thinned,
         double alpha, double rho) {
        return candidate_key(make_step(culled, thinned, "keep-odd", alpha, rho));
      },
      py::arg("culled") = std::vector<std::string>{},
      py::arg("thinned") = std::vector<std::string>{}, py::arg("alpha") = 1.0,
      py::arg("rho") = 1.0);
  m.def("canonical_config",
        [](const std::string& text) { return config_to_json(config_from_json(text)); });

  // ---- models, checkpoints, inference-time merging
  m.def("make_model", [](const NetworkGraph& g, uint64_t seed) { return make_model<float>(g, seed); },
        py::arg("graph"), py::arg("seed") = 1);
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("model"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("checkpoint_bytes",
        [](const ModelF& m_) { return py::bytes(checkpoint_bytes(m_)); });
  m.def("fold_batchnorm", &fold_batchnorm);
  m.def("merge_adjacent_linear", &merge_adjacent_linear);
  m.def(
      "equivalence_check",
      [](ModelF& a, ModelF& b, int n_samples, int batch, double tolerance) {
        const auto rep = equivalence_check(a, b, n_samples, batch, tolerance);
        py::dict d;
        d["n_samples"] = rep.n_samples;
        d["max_rel_error"] = rep.max_rel_error;
        d["pass"] = rep.pass;
        return d;
      },
      py::arg("original"), py::arg("merged"), py::arg("n_samples") = 100,
      py::arg("batch") = 10, py::arg("tolerance") = 1e-4);
}

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "puicl/checkpoint.hpp"
#include "puicl/error.hpp"
#include "puicl/eval.hpp"
#include "puicl/model.hpp"
#include "puicl/pusplit.hpp"
#include "puicl/trainer.hpp"

namespace py = pybind11;
using namespace puicl;

namespace {

ModelConfig model_config(int embed, int blocks, int heads, int ff) {
  ModelConfig c{embed, blocks, heads, ff};
  c.validate();
  return c;
}

nlohmann::json to_nlohmann(const py::handle& obj) {
  const py::module_ json = py::module_::import("json");
  return nlohmann::json::parse(py::str(json.attr("dumps")(obj)).cast<std::string>());
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

PuInstance make_instance(const RowMatrix& labeled, const RowMatrix& unlabeled) {
  if (labeled.cols() != unlabeled.cols()) {
    throw ShapeError("labeled and unlabeled rows must have the same feature count (" +
                     std::to_string(labeled.cols()) + " vs " + std::to_string(unlabeled.cols()) + ")");
  }
  PuInstance inst;
  inst.labeled = labeled;
  inst.unlabeled = unlabeled;
  return inst;
}

py::dict counts_dict(const ParamCounts& c) {
  py::dict d;
  d["encoders"] = c.encoders;
  d["blocks"] = c.blocks;
  d["decoder"] = c.decoder;
  d["total"] = c.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_puicl, m) {
  m.doc() = "PU in-context classifier core";

  auto base = py::register_exception<std::runtime_error>(m, "PuiclError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<DegenerateSampleError>(m, "DegenerateSampleError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("count_params",
        [](int embed, int blocks, int heads, int ff) { return counts_dict(count_params(model_config(embed, blocks, heads, ff))); },
        py::arg("embed") = 128, py::arg("blocks") = 6, py::arg("heads") = 8, py::arg("ff") = 256);

  m.def("pu_composition", [](std::size_t positives, double eta, double pi) {
    const PuComposition c = pu_composition(positives, eta, pi);
    py::dict d;
    d["n_train"] = c.n_train;
    d["neg_train"] = c.neg_train;
    d["labeled"] = c.labeled();
    d["n_unlabeled"] = c.n_unlabeled;
    d["neg_unlabeled"] = c.neg_unlabeled;
    return d;
  }, py::arg("positives"), py::arg("eta"), py::arg("pi"));

  m.def("generate_instance",
        [](std::uint64_t seed, std::size_t index, std::size_t features, std::size_t positives, double eta, double pi,
           double p_causal) {
          GenConfig g;
          g.features = features;
          g.positives = positives;
          g.eta = eta;
          g.pi = pi;
          g.p_causal = p_causal;
          const PuInstance inst = generate_instance(g, seed, index);
          py::dict d;
          d["labeled"] = inst.labeled;
          d["unlabeled"] = inst.unlabeled;
          d["truth"] = inst.hidden_labels;
          d["pi"] = inst.pi;
          d["eta"] = inst.eta;
          return d;
        },
        py::arg("seed"), py::arg("index") = 0, py::arg("features") = 10, py::arg("positives") = 100,
        py::arg("eta") = 1.0, py::arg("pi") = 0.5, py::arg("p_causal") = 0.5);

  m.def("auc", [](const std::vector<double>& scores, const std::vector<int>& truth) { return auc(scores, truth); },
        py::arg("scores"), py::arg("truth"));

  m.def("evaluate",
        [](const std::vector<double>& scores, const std::vector<int>& truth, double threshold) {
          const MetricsReport r = evaluate(scores, truth, threshold);
          py::dict d;
          d["auc"] = r.auc;
          d["acc"] = r.acc;
          d["f1"] = r.f1;
          return d;
        },
        py::arg("scores"), py::arg("truth"), py::arg("threshold") = 0.5);

  m.def("naive_baseline",
        [](const RowMatrix& labeled, const RowMatrix& unlabeled) { return naive_baseline(make_instance(labeled, unlabeled)); },
        py::arg("labeled"), py::arg("unlabeled"));

  py::class_<LoadedModel>(m, "Model")
      .def_static("init",
                  [](std::uint64_t seed, int embed, int blocks, int heads, int ff) {
                    Rng rng(seed);
                    return LoadedModel{ModelParams<float>::init(model_config(embed, blocks, heads, ff), rng), {}};
                  },
                  py::arg("seed"), py::arg("embed") = 128, py::arg("blocks") = 6, py::arg("heads") = 8,
                  py::arg("ff") = 256)
      .def_static("load", &load_model, py::arg("path"))
      .def("save", [](const LoadedModel& self, const std::filesystem::path& path) { save_model(path, self.params, self.info); },
           py::arg("path"))
      .def_property_readonly("config", [](const LoadedModel& self) { return to_python(to_json(self.params.config)); })
      .def_property_readonly("training_step", [](const LoadedModel& self) { return self.info.training_step; })
      .def("predict_proba",
           [](const LoadedModel& self, const RowMatrix& labeled, const RowMatrix& unlabeled) {
             const PuInstance inst = make_instance(labeled, unlabeled);
             py::gil_scoped_release release;
             return predict_proba(self.params, inst);
           },
           py::arg("labeled"), py::arg("unlabeled"),
           "Class probabilities [n_u, 2]; column 0 is positive.");

  m.def("train",
        [](const py::dict& config, const py::dict& model, std::uint64_t seed, const std::filesystem::path& out_dir,
           std::int64_t stop_at) {
          const TrainConfig tc = TrainConfig::from_json(to_nlohmann(config));
          const ModelConfig mc = model_config_from_json(to_nlohmann(model));
          TrainRunOptions opts;
          opts.out_dir = out_dir;
          opts.stop_at = stop_at;
          TrainSummary s;
          {
            py::gil_scoped_release release;
            s = train(tc, mc, seed, opts);
          }
          py::dict d;
          d["steps_completed"] = s.steps_completed;
          d["final_loss"] = s.final_loss;
          d["model_path"] = s.model_path;
          d["state_path"] = s.state_path;
          return d;
        },
        py::arg("config"), py::arg("model"), py::arg("seed"), py::arg("out_dir"), py::arg("stop_at") = -1);
}

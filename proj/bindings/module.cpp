// Python bindings for the main operations: synthetic site generation,
// dataset assembly, training (single- and multi-source), inference,
// evaluation, checkpointing, and the full command line entry point.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flare/cli.hpp"
#include "flare/data.hpp"
#include "flare/error.hpp"
#include "flare/eval.hpp"
#include "flare/model.hpp"
#include "flare/trainer.hpp"

namespace py = pybind11;
using namespace flare;

namespace {

ViewManifest manifest_from(
    const std::vector<std::pair<std::string, int>>& views, int classes) {
  ViewManifest mf;
  for (const auto& [name, dim] : views) mf.views.push_back({name, dim});
  mf.classes = classes;
  return mf;
}

SampleSet set_from(const Matrix& x, const std::optional<std::vector<int>>& y) {
  if (y && Eigen::Index(y->size()) != x.rows())
    throw ShapeError("labels and feature rows disagree");
  SampleSet set;
  set.reserve(size_t(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Sample s;
    s.x = x.row(i).transpose();
    s.label = y ? (*y)[size_t(i)] : kUnlabeled;
    set.push_back(std::move(s));
  }
  return set;
}

std::pair<Matrix, std::vector<int>> set_to(const SampleSet& set) {
  return {stack_features(set), labels_of(set)};
}

struct DatasetHandle {
  DomainDataset data;
};

struct ModelHandle {
  ModelParams params;
};

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["sen"] = m.sen;
  d["spe"] = m.spe;
  d["f1"] = m.f1;
  d["gmean"] = m.gmean;
  return d;
}

TrainConfig config_from(int epochs, int batch, double lr, int latent_dim,
                        int extractor_hidden, int classifier_hidden,
                        int decoder_hidden, double lambda1, double lambda2,
                        double lambda3, double alpha, double delta,
                        bool use_translator, uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch = batch;
  cfg.lr = lr;
  cfg.latent_dim = latent_dim;
  cfg.extractor_hidden = extractor_hidden;
  cfg.classifier_hidden = classifier_hidden;
  cfg.decoder_hidden = decoder_hidden;
  cfg.weights.lambda1 = lambda1;
  cfg.weights.lambda2 = lambda2;
  cfg.weights.lambda3 = lambda3;
  cfg.weights.alpha = alpha;
  cfg.delta = delta;
  cfg.use_translator = use_translator;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(flare_core, m) {
  m.doc() =
      "Semi-supervised multi-site adaptation: class-balanced boosting "
      "sampling, prototype alignment on the unit sphere, conditional "
      "distribution matching, and multi-view reconstruction.";

  py::register_exception<FlareError>(m, "FlareError", PyExc_ValueError);

  py::class_<DatasetHandle>(m, "Dataset")
      .def_property_readonly(
          "n_sources",
          [](const DatasetHandle& d) { return int(d.data.sources.size()); })
      .def_property_readonly(
          "n_target_labeled",
          [](const DatasetHandle& d) {
            return int(d.data.target_labeled.size());
          })
      .def_property_readonly(
          "n_target_unlabeled",
          [](const DatasetHandle& d) {
            return int(d.data.target_unlabeled.size());
          })
      .def_property_readonly(
          "feature_dim",
          [](const DatasetHandle& d) { return d.data.manifest.total_dim(); })
      .def("source", [](const DatasetHandle& d, int e) {
        if (e < 0 || size_t(e) >= d.data.sources.size())
          throw ContractError("source index out of range");
        return set_to(d.data.sources[size_t(e)]);
      })
      .def("target_labeled",
           [](const DatasetHandle& d) { return set_to(d.data.target_labeled); })
      .def("target_unlabeled", [](const DatasetHandle& d) {
        return set_to(d.data.target_unlabeled);
      });

  py::class_<ModelHandle>(m, "Model")
      .def_property_readonly(
          "n_sources",
          [](const ModelHandle& h) { return h.params.n_sources(); })
      .def_property_readonly(
          "source_weights",
          [](const ModelHandle& h) { return h.params.source_weights; })
      .def("predict_proba",
           [](const ModelHandle& h, const Matrix& x) {
             return predict_target(h.params, x);
           },
           py::arg("x"),
           "Fused class probabilities for target-space feature rows.")
      .def("predict",
           [](const ModelHandle& h, const Matrix& x) {
             return predict_labels(predict_target(h.params, x));
           },
           py::arg("x"))
      .def("latent",
           [](const ModelHandle& h, const Matrix& x) {
             return target_latents(h.params, x);
           },
           py::arg("x"), "Unit-sphere embeddings of target-space rows.")
      .def("save",
           [](const ModelHandle& h, const std::string& path) {
             save_checkpoint(path, h.params);
           },
           py::arg("path"))
      .def_static("load", [](const std::string& path) {
        return ModelHandle{load_checkpoint(path)};
      }, py::arg("path"));

  m.def(
      "generate_sites",
      [](const std::vector<std::pair<std::string, int>>& views, int classes,
         int sites, const std::vector<int>& counts, double separation,
         double shift, double noise, uint64_t seed) {
        SynthSpec spec;
        spec.manifest = manifest_from(views, classes);
        spec.sites = sites;
        spec.counts = counts;
        spec.separation = separation;
        spec.shift = shift;
        spec.noise = noise;
        spec.seed = seed;
        std::vector<std::pair<Matrix, std::vector<int>>> out;
        for (const SampleSet& site : synth_generate(spec))
          out.push_back(set_to(site));
        return out;
      },
      py::arg("views"), py::arg("classes"), py::arg("sites"),
      py::arg("counts"), py::arg("separation") = 3.0, py::arg("shift") = 1.0,
      py::arg("noise") = 1.0, py::arg("seed") = 0,
      "Gaussian class clusters per site under a per-site affine distortion; "
      "returns one (features, labels) pair per site.");

  m.def(
      "build_dataset",
      [](const std::vector<std::pair<std::string, int>>& views, int classes,
         const std::vector<std::pair<Matrix, std::vector<int>>>& sources,
         const Matrix& target_x, const std::vector<int>& target_y,
         const std::string& setting, uint64_t seed) {
        std::vector<SampleSet> src;
        for (const auto& [x, y] : sources) src.push_back(set_from(x, y));
        return DatasetHandle{make_multi_domain(
            src, set_from(target_x, target_y), manifest_from(views, classes),
            setting_from_string(setting), seed)};
      },
      py::arg("views"), py::arg("classes"), py::arg("sources"),
      py::arg("target_x"), py::arg("target_y"),
      py::arg("setting") = "imbalanced", py::arg("seed") = 0,
      "Partitions the target site per `setting`, standardizes every site on "
      "its own training portion, and assembles the source/labeled/unlabeled "
      "pools.");

  const TrainConfig d;
  auto fit_args = [&](auto&& fn, const char* name, const char* doc) {
    m.def(
        name, std::forward<decltype(fn)>(fn), py::arg("dataset"),
        py::arg("epochs") = d.epochs, py::arg("batch") = d.batch,
        py::arg("lr") = d.lr, py::arg("latent_dim") = d.latent_dim,
        py::arg("extractor_hidden") = d.extractor_hidden,
        py::arg("classifier_hidden") = d.classifier_hidden,
        py::arg("decoder_hidden") = d.decoder_hidden,
        py::arg("lambda1") = d.weights.lambda1,
        py::arg("lambda2") = d.weights.lambda2,
        py::arg("lambda3") = d.weights.lambda3,
        py::arg("alpha") = d.weights.alpha, py::arg("delta") = d.delta,
        py::arg("use_translator") = d.use_translator, py::arg("seed") = 0,
        doc);
  };
  fit_args(
      [](const DatasetHandle& ds, int epochs, int batch, double lr,
         int latent_dim, int extractor_hidden, int classifier_hidden,
         int decoder_hidden, double lambda1, double lambda2, double lambda3,
         double alpha, double delta, bool use_translator, uint64_t seed) {
        auto [params, report] = fit(
            ds.data,
            config_from(epochs, batch, lr, latent_dim, extractor_hidden,
                        classifier_hidden, decoder_hidden, lambda1, lambda2,
                        lambda3, alpha, delta, use_translator, seed));
        return std::pair<ModelHandle, std::string>{ModelHandle{params},
                                                   report.to_json()};
      },
      "fit",
      "Trains on the first source pool plus the target pools; returns "
      "(model, training report as a JSON string).");
  fit_args(
      [](const DatasetHandle& ds, int epochs, int batch, double lr,
         int latent_dim, int extractor_hidden, int classifier_hidden,
         int decoder_hidden, double lambda1, double lambda2, double lambda3,
         double alpha, double delta, bool use_translator, uint64_t seed) {
        auto [params, report] = fit_multi(
            ds.data,
            config_from(epochs, batch, lr, latent_dim, extractor_hidden,
                        classifier_hidden, decoder_hidden, lambda1, lambda2,
                        lambda3, alpha, delta, use_translator, seed));
        return std::pair<ModelHandle, std::string>{ModelHandle{params},
                                                   report.to_json()};
      },
      "fit_multi",
      "Trains on every source pool with per-source fusion weights; returns "
      "(model, training report as a JSON string).");

  m.def(
      "evaluate",
      [](const ModelHandle& h, const Matrix& x, const std::vector<int>& y) {
        return metrics_dict(evaluate(h.params, set_from(x, y)));
      },
      py::arg("model"), py::arg("x"), py::arg("y"),
      "Sensitivity, specificity, F1 and G-mean of the fused classifier on "
      "labeled rows.");

  m.def(
      "metrics_from_counts",
      [](long tp, long fp, long tn, long fn) {
        ConfusionMatrix cm;
        cm.tp = tp;
        cm.fp = fp;
        cm.tn = tn;
        cm.fn = fn;
        return metrics_dict(metrics(cm));
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  m.def("run_cli", &run_cli, py::arg("args"),
        "Runs the command line tool (generate / train / train-multi / eval / "
        "gridsearch / gradcheck / bench) and returns its exit code.");
}

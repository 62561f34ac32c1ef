#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "flare/data.hpp"
#include "flare/graph.hpp"

namespace flare {

// Fully connected stack given by its layer widths (input first).  Hidden
// layers use ReLU; the final layer is linear.
struct MlpShape {
  std::vector<int> widths;
  int in() const { return widths.front(); }
  int out() const { return widths.back(); }
};

struct NetworkShape {
  int total_dim = 0;
  int classes = 0;
  int latent_dim = 64;
  MlpShape translator;             // input -> input-wide hidden x2 -> input
  MlpShape extractor;              // input -> 128 -> latent
  MlpShape classifier;             // latent -> 32 -> classes
  std::vector<MlpShape> decoders;  // latent -> 64 -> view dim, one per view

  static NetworkShape defaults(const ViewManifest& mf, int latent_dim = 64,
                               int extractor_hidden = 128,
                               int classifier_hidden = 32,
                               int decoder_hidden = 64);
};

struct Mlp {
  std::vector<Matrix> w;  // layer weights, in x out
  std::vector<Matrix> b;  // layer biases, 1 x out
};

// One translator and one classifier per source domain; the latent extractor
// and the per-view decoders are shared.
struct ModelParams {
  NetworkShape shape;
  bool use_translator = true;
  std::vector<Mlp> translators;
  Mlp extractor;
  std::vector<Mlp> classifiers;
  std::vector<Mlp> decoders;
  // Convex fusion weights over the per-source classifiers used by the
  // prediction rule; updated each epoch during training from the source
  // discrepancy losses.  Initialized to 1/E.
  std::vector<double> source_weights;

  int n_sources() const { return static_cast<int>(classifiers.size()); }

  // Weights drawn uniform in +-sqrt(6 / fan_in), biases zero, all from the
  // given seed.
  static ModelParams init(const NetworkShape& shape, int n_sources,
                          bool use_translator, uint64_t seed);
};

// Visits every tensor in a fixed documented order (translators, extractor,
// classifiers, decoders; weights before biases per layer) with a stable name.
void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, Matrix&)>& f);
void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, const Matrix&)>& f);

// Graph-side mirror of ModelParams.
struct MlpVars {
  std::vector<Var> w, b;
};
struct ModelVars {
  std::vector<MlpVars> translators;
  MlpVars extractor;
  std::vector<MlpVars> classifiers;
  std::vector<MlpVars> decoders;
  bool use_translator = true;
};

// Inserts all tensors as parameters (trainable) or constants (inference).
ModelVars insert_params(Graph& g, const ModelParams& p, bool trainable);

Var mlp_forward(Graph& g, const MlpVars& net, Var x);

// Source pass: translate into the target feature space, then embed onto the
// unit sphere.  `translated` feeds the source reconstruction targets.
struct SourceForward {
  Var translated;
  Var latent;
};
SourceForward forward_source(Graph& g, const ModelVars& m, Var x, int source);

// Target pass: straight to the unit-sphere embedding.
Var forward_target(Graph& g, const ModelVars& m, Var x);

Var class_logits(Graph& g, const ModelVars& m, Var z, int source);
Var class_probs(Graph& g, const ModelVars& m, Var z, int source);
Var reconstruct_view(Graph& g, const ModelVars& m, Var z, int view);

// Hard labels from probability rows.  Binary: positive iff p(class 1) >= 0.5
// (ties go to the positive class).  Otherwise argmax, lowest index on ties.
std::vector<int> predict_labels(const Matrix& probs);

// Binary checkpoint: fixed magic, shape header, then every tensor as
// rows, cols and row-major 64-bit entries.  Round trips are bit exact.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& p);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace flare

#pragma once

#include <optional>
#include <vector>

#include "flare/data.hpp"
#include "flare/graph.hpp"
#include "flare/model.hpp"

namespace flare {

enum class FeatureKernel { Rbf, Linear };

FeatureKernel kernel_from_string(const std::string& s);
const char* to_string(FeatureKernel k);

struct KernelConfig {
  FeatureKernel kernel = FeatureKernel::Rbf;
  double tau = 1e-3;  // ridge added to the feature Gram before inversion
  // RBF precision gamma in exp(-gamma * d^2).  0 means: recompute from the
  // median heuristic on the pooled pairwise squared distances of the two
  // batches at graph-build time (the value then acts as a constant for the
  // gradients of that step).
  double gamma = 0.0;
};

// Median-heuristic precision: gamma = 1 / (2 sigma^2) with sigma^2 the
// median off-diagonal pairwise squared distance of the pooled rows.
double median_gamma(const Matrix& za, const Matrix& zb);

// Class prototypes on the unit sphere, one row per class.
struct Prototypes {
  Matrix p;  // classes x latent_dim, unit rows
  std::vector<uint8_t> kept_previous;  // degenerate classes that fell back
};

// Mean of the unit latent rows per class, renormalized onto the sphere.
// A class whose batch mean vanishes (or that is absent) keeps the previous
// prototype and is flagged; without a previous value this aborts.
Prototypes estimate_prototypes(const Matrix& z, const std::vector<int>& labels,
                               int classes, const Prototypes* previous);

struct TripletStats {
  int skipped_classes = 0;
};

// Hinge over prototype-to-sample cosine similarities with batch-hard mining:
// mean_j [ max_{z not in j} p_j z - min_{z in j} p_j z + alpha ]_+ .
// Prototypes enter as constants; gradients flow only through z.  Classes
// missing a positive or a negative in the batch contribute zero and are
// counted in `stats`.
Var prototype_triplet_loss(Graph& g, const Matrix& prototypes, Var z,
                           const std::vector<int>& labels, double alpha,
                           TripletStats* stats = nullptr);

// One-hot rows for hard labels.
Var onehot_constant(Graph& g, const std::vector<int>& labels, int classes);

// Discrepancy of the conditional operators of two batches:
//   Tr(La Ga La Ka) + Tr(Lb Gb Lb Kb) - 2 Tr(La Gab Lb Kba)
// with Lx = (Kx + tau I)^-1, feature kernels on the latent rows and linear
// label kernels on the probability (or one-hot) rows.  Batches must have
// equal size.  The value is a squared operator norm, hence >= 0 up to
// roundoff.
Var cmmd(Graph& g, Var za, Var ya, Var zb, Var yb, const KernelConfig& cfg);

// Source-branch wrapper of Eq-style pairing: batch a with true labels,
// batch b re-labeled by the model's own source classifier.
Var cmmd_source(Graph& g, const ModelVars& m, Var xa,
                const std::vector<int>& labels_a, Var xb, int source,
                int classes, const KernelConfig& cfg);

// Target-branch wrapper: batch a is labeled target data, batch b comes from
// the union of labeled and unlabeled target pools and is re-labeled by the
// (weight-fused) classifiers.
Var cmmd_target(Graph& g, const ModelVars& m, Var xa,
                const std::vector<int>& labels_a, Var xb,
                const std::vector<double>& source_weights, int classes,
                const KernelConfig& cfg);

// Convex fusion of the per-source classifier probabilities.
Var fused_probs(Graph& g, const ModelVars& m, Var z,
                const std::vector<double>& source_weights);

// Constant 0/1 selector that slices the columns of view v out of a flat
// feature matrix via right-multiplication.
Var view_selector(Graph& g, const ViewManifest& mf, int view);

// (1/n) sum_v || recon_v - target sliced to view v ||_F^2 over given
// reconstruction nodes.
Var recon_loss_terms(Graph& g, const std::vector<Var>& recon, Var target,
                     const ViewManifest& mf);

// Model-aware form: decodes every view from z first.
Var recon_loss(Graph& g, const ModelVars& m, Var z, Var target,
               const ViewManifest& mf);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 100.0;
  double lambda3 = 0.002;
  double alpha = 0.0;
};

// lambda1 (Lc_s + Lc_t) + lambda2 Lp + lambda3 (Lr_s + Lr_t), graph side.
Var total_loss(Graph& g, Var lc_s, Var lc_t, Var lp, Var lr_s, Var lr_t,
               const LossWeights& w);

// Inverse-loss source weights, clamped below at 1e-8 before inversion.
std::vector<double> msource_weights(const std::vector<double>& source_losses);

// Weighted fusion of per-source probability rows (plain value side).
Matrix msource_predict(const std::vector<Matrix>& probs,
                       const std::vector<double>& weights);

// lambda1 Lc_t + lambda3 Lr_t
//   + sum_e (lambda1/E Lc_s[e] + lambda2 w[e] Lp[e] + lambda3/E Lr_s[e]).
double msource_total(double lc_t, double lr_t,
                     const std::vector<double>& lc_s,
                     const std::vector<double>& lp,
                     const std::vector<double>& lr_s,
                     const std::vector<double>& weights, const LossWeights& w);

// Mean cross entropy of probability rows against hard labels (baselines and
// plain classifier training).
Var cross_entropy(Graph& g, Var probs, const std::vector<int>& labels);

}  // namespace flare

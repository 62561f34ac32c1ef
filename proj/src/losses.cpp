#include "flare/losses.hpp"

#include <algorithm>
#include <cmath>

#include "flare/error.hpp"

namespace flare {

FeatureKernel kernel_from_string(const std::string& s) {
  if (s == "rbf") return FeatureKernel::Rbf;
  if (s == "linear") return FeatureKernel::Linear;
  throw ContractError("unknown kernel '" + s + "' (expected rbf or linear)");
}

const char* to_string(FeatureKernel k) {
  return k == FeatureKernel::Rbf ? "rbf" : "linear";
}

double median_gamma(const Matrix& za, const Matrix& zb) {
  Matrix pooled(za.rows() + zb.rows(), za.cols());
  pooled << za, zb;
  std::vector<double> d2;
  d2.reserve(pooled.rows() * (pooled.rows() - 1) / 2);
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j)
      d2.push_back((pooled.row(i) - pooled.row(j)).squaredNorm());
  if (d2.empty()) return 0.5;
  size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
  double sigma2 = d2[mid];
  if (sigma2 < 1e-12) sigma2 = 1.0;  // all rows coincide
  return 1.0 / (2.0 * sigma2);
}

Prototypes estimate_prototypes(const Matrix& z, const std::vector<int>& labels,
                               int classes, const Prototypes* previous) {
  if (static_cast<size_t>(z.rows()) != labels.size())
    throw ContractError("estimate_prototypes: one label per latent row");
  if (previous && (previous->p.rows() != classes || previous->p.cols() != z.cols()))
    throw ContractError("estimate_prototypes: previous prototypes have wrong shape");
  Prototypes out;
  out.p = Matrix::Zero(classes, z.cols());
  out.kept_previous.assign(classes, 0);
  std::vector<int> count(classes, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ContractError("estimate_prototypes: label outside [0, classes)");
    out.p.row(labels[i]) += z.row(i);
    ++count[labels[i]];
  }
  for (int c = 0; c < classes; ++c) {
    double norm = out.p.row(c).norm();
    if (count[c] == 0 || norm < 1e-12) {
      if (!previous)
        throw ContractError("estimate_prototypes: class " + std::to_string(c) +
                            " degenerate and no previous prototype to keep");
      out.p.row(c) = previous->p.row(c);
      out.kept_previous[c] = 1;
    } else {
      out.p.row(c) /= norm;
    }
  }
  return out;
}

Var prototype_triplet_loss(Graph& g, const Matrix& prototypes, Var z,
                           const std::vector<int>& labels, double alpha,
                           TripletStats* stats) {
  const int classes = static_cast<int>(prototypes.rows());
  const Eigen::Index n = g.value(z).rows();
  if (static_cast<size_t>(n) != labels.size())
    throw ContractError("prototype_triplet_loss: one label per latent row");
  if (prototypes.cols() != g.value(z).cols())
    throw ContractError("prototype_triplet_loss: latent width mismatch");
  if (alpha < 0.0)
    throw ContractError("prototype_triplet_loss: alpha must be >= 0");

  // Similarities of every prototype against the batch; mining happens on the
  // current values, then re-enters the graph through constant selectors.
  Var sim = g.matmul(g.constant(prototypes, "prototypes"), g.transpose(z));
  const Matrix& s = g.value(sim);

  Matrix select = Matrix::Zero(classes, n);
  Matrix margin = Matrix::Zero(classes, 1);
  int skipped = 0;
  for (int c = 0; c < classes; ++c) {
    int hard_neg = -1, easy_pos = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (labels[i] == c) {
        if (easy_pos < 0 || s(c, i) < s(c, easy_pos)) easy_pos = int(i);
      } else {
        if (hard_neg < 0 || s(c, i) > s(c, hard_neg)) hard_neg = int(i);
      }
    }
    if (hard_neg < 0 || easy_pos < 0) {
      ++skipped;  // class has no positive or no negative in this batch
      continue;
    }
    select(c, hard_neg) += 1.0;
    select(c, easy_pos) -= 1.0;
    margin(c, 0) = alpha;
  }
  if (stats) stats->skipped_classes = skipped;

  // Per class: [ (hard negative sim) - (easiest positive sim) + alpha ]_+ ,
  // averaged over all classes; skipped rows stay exactly zero.
  Var per_class = g.matmul(g.mul(g.constant(select), sim),
                           g.constant(Matrix::Ones(n, 1)));
  Var hinged = g.relu(g.add(per_class, g.constant(margin)));
  return g.scale(g.sum(hinged), 1.0 / double(classes));
}

Var onehot_constant(Graph& g, const std::vector<int>& labels, int classes) {
  Matrix y = Matrix::Zero(labels.size(), classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ContractError("onehot_constant: label outside [0, classes)");
    y(i, labels[i]) = 1.0;
  }
  return g.constant(std::move(y), "onehot");
}

namespace {

// Feature Gram node between two latent row sets.
Var feature_kernel(Graph& g, Var za, Var zb, const KernelConfig& cfg,
                   double gamma) {
  if (cfg.kernel == FeatureKernel::Linear)
    return g.matmul(za, g.transpose(zb));
  return g.exp(g.scale(g.sqdist(za, zb), -gamma));
}

}  // namespace

Var cmmd(Graph& g, Var za, Var ya, Var zb, Var yb, const KernelConfig& cfg) {
  const Eigen::Index n = g.value(za).rows();
  if (g.value(zb).rows() != n)
    throw ContractError("cmmd: batch sizes differ (" + std::to_string(n) +
                        " vs " + std::to_string(g.value(zb).rows()) +
                        "); draw matched batches");
  if (g.value(ya).rows() != n || g.value(yb).rows() != n)
    throw ContractError("cmmd: label rows must match their feature batch");
  if (g.value(ya).cols() != g.value(yb).cols())
    throw ContractError("cmmd: label widths differ");

  double gamma = cfg.gamma;
  if (cfg.kernel == FeatureKernel::Rbf && gamma <= 0.0)
    gamma = median_gamma(g.value(za), g.value(zb));

  Var ka = feature_kernel(g, za, za, cfg, gamma);
  Var kb = feature_kernel(g, zb, zb, cfg, gamma);
  Var kba = feature_kernel(g, zb, za, cfg, gamma);
  Var la = g.reg_inverse(ka, cfg.tau);
  Var lb = g.reg_inverse(kb, cfg.tau);
  Var ga = g.matmul(ya, g.transpose(ya));
  Var gb = g.matmul(yb, g.transpose(yb));
  Var gab = g.matmul(ya, g.transpose(yb));

  Var t1 = g.trace(g.matmul(g.matmul(la, ga), g.matmul(la, ka)));
  Var t2 = g.trace(g.matmul(g.matmul(lb, gb), g.matmul(lb, kb)));
  Var t3 = g.trace(g.matmul(g.matmul(la, gab), g.matmul(lb, kba)));
  return g.add(g.add(t1, t2), g.scale(t3, -2.0));
}

Var cmmd_source(Graph& g, const ModelVars& m, Var xa,
                const std::vector<int>& labels_a, Var xb, int source,
                int classes, const KernelConfig& cfg) {
  SourceForward fa = forward_source(g, m, xa, source);
  SourceForward fb = forward_source(g, m, xb, source);
  Var ya = onehot_constant(g, labels_a, classes);
  Var yb = class_probs(g, m, fb.latent, source);
  return cmmd(g, fa.latent, ya, fb.latent, yb, cfg);
}

Var cmmd_target(Graph& g, const ModelVars& m, Var xa,
                const std::vector<int>& labels_a, Var xb,
                const std::vector<double>& source_weights, int classes,
                const KernelConfig& cfg) {
  Var za = forward_target(g, m, xa);
  Var zb = forward_target(g, m, xb);
  Var ya = onehot_constant(g, labels_a, classes);
  Var yb = fused_probs(g, m, zb, source_weights);
  return cmmd(g, za, ya, zb, yb, cfg);
}

Var fused_probs(Graph& g, const ModelVars& m, Var z,
                const std::vector<double>& source_weights) {
  if (source_weights.size() != m.classifiers.size())
    throw ContractError("fused_probs: one weight per source required");
  if (source_weights.size() == 1) return class_probs(g, m, z, 0);
  Var acc;
  for (size_t e = 0; e < source_weights.size(); ++e) {
    Var term = g.scale(class_probs(g, m, z, int(e)), source_weights[e]);
    acc = e == 0 ? term : g.add(acc, term);
  }
  return acc;
}

Var view_selector(Graph& g, const ViewManifest& mf, int view) {
  const int dim = mf.total_dim();
  const int off = mf.view_offset(view);
  Matrix sel = Matrix::Zero(dim, mf.views[view].dim);
  for (int j = 0; j < mf.views[view].dim; ++j) sel(off + j, j) = 1.0;
  return g.constant(std::move(sel), "view_selector" + std::to_string(view));
}

Var recon_loss_terms(Graph& g, const std::vector<Var>& recon, Var target,
                     const ViewManifest& mf) {
  if (recon.size() != mf.views.size())
    throw ContractError("recon_loss_terms: one reconstruction per view");
  const Eigen::Index n = g.value(target).rows();
  Var acc;
  for (size_t v = 0; v < recon.size(); ++v) {
    if (g.value(recon[v]).rows() != n)
      throw ContractError("recon_loss_terms: reconstruction row count mismatch");
    Var sliced = g.matmul(target, view_selector(g, mf, int(v)));
    Var term = g.sum(g.square(g.sub(recon[v], sliced)));
    acc = v == 0 ? term : g.add(acc, term);
  }
  return g.scale(acc, 1.0 / double(n));
}

Var recon_loss(Graph& g, const ModelVars& m, Var z, Var target,
               const ViewManifest& mf) {
  std::vector<Var> recon;
  for (size_t v = 0; v < mf.views.size(); ++v)
    recon.push_back(reconstruct_view(g, m, z, int(v)));
  return recon_loss_terms(g, recon, target, mf);
}

Var total_loss(Graph& g, Var lc_s, Var lc_t, Var lp, Var lr_s, Var lr_t,
               const LossWeights& w) {
  Var classifier_terms = g.scale(g.add(lc_s, lc_t), w.lambda1);
  Var recon_terms = g.scale(g.add(lr_s, lr_t), w.lambda3);
  return g.add(g.add(classifier_terms, g.scale(lp, w.lambda2)), recon_terms);
}

std::vector<double> msource_weights(const std::vector<double>& source_losses) {
  if (source_losses.empty())
    throw ContractError("msource_weights: no source losses");
  std::vector<double> inv(source_losses.size());
  double total = 0.0;
  for (size_t e = 0; e < source_losses.size(); ++e) {
    inv[e] = 1.0 / std::max(source_losses[e], 1e-8);
    total += inv[e];
  }
  for (double& v : inv) v /= total;
  return inv;
}

Matrix msource_predict(const std::vector<Matrix>& probs,
                       const std::vector<double>& weights) {
  if (probs.empty() || probs.size() != weights.size())
    throw ContractError("msource_predict: one probability block per weight");
  Matrix out = weights[0] * probs[0];
  for (size_t e = 1; e < probs.size(); ++e) {
    if (probs[e].rows() != out.rows() || probs[e].cols() != out.cols())
      throw ContractError("msource_predict: probability shapes differ");
    out += weights[e] * probs[e];
  }
  return out;
}

double msource_total(double lc_t, double lr_t,
                     const std::vector<double>& lc_s,
                     const std::vector<double>& lp,
                     const std::vector<double>& lr_s,
                     const std::vector<double>& weights, const LossWeights& w) {
  const size_t E = lc_s.size();
  if (E == 0 || lp.size() != E || lr_s.size() != E || weights.size() != E)
    throw ContractError("msource_total: per-source term arity mismatch");
  double out = w.lambda1 * lc_t + w.lambda3 * lr_t;
  for (size_t e = 0; e < E; ++e)
    out += w.lambda1 / double(E) * lc_s[e] + w.lambda2 * weights[e] * lp[e] +
           w.lambda3 / double(E) * lr_s[e];
  return out;
}

Var cross_entropy(Graph& g, Var probs, const std::vector<int>& labels) {
  const Eigen::Index n = g.value(probs).rows();
  if (static_cast<size_t>(n) != labels.size())
    throw ContractError("cross_entropy: one label per probability row");
  const int classes = int(g.value(probs).cols());
  Var mask = onehot_constant(g, labels, classes);
  // Off-class probabilities may underflow to exactly zero once a model grows
  // confident; pin those entries to one before the log so only the true-class
  // terms reach it (log 1 = 0 and the masked gradient there is zero anyway).
  Matrix off = Matrix::Ones(n, classes);
  for (size_t i = 0; i < labels.size(); ++i) off(Eigen::Index(i), labels[i]) = 0.0;
  Var pinned = g.add(g.mul(mask, probs), g.constant(std::move(off), "offmask"));
  return g.scale(g.sum(g.log(pinned)), -1.0 / double(n));
}

}  // namespace flare

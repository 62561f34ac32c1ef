#include "flare/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flare/error.hpp"

namespace flare {

namespace {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Parameter bookkeeping: tensors, their stable names, and the matching graph
// variables all share the for_each_tensor visiting order.

struct ParamRefs {
  std::vector<Matrix*> tensors;
  std::vector<std::string> names;
};

ParamRefs collect_refs(ModelParams& p) {
  ParamRefs refs;
  for_each_tensor(p, [&](const std::string& n, Matrix& m) {
    refs.tensors.push_back(&m);
    refs.names.push_back(n);
  });
  return refs;
}

void collect_vars(const ModelVars& m, std::vector<Var>& out) {
  auto push_mlp = [&](const MlpVars& net) {
    for (size_t l = 0; l < net.w.size(); ++l) {
      out.push_back(net.w[l]);
      out.push_back(net.b[l]);
    }
  };
  for (const MlpVars& t : m.translators) push_mlp(t);
  push_mlp(m.extractor);
  for (const MlpVars& c : m.classifiers) push_mlp(c);
  for (const MlpVars& d : m.decoders) push_mlp(d);
}

// ---------------------------------------------------------------------------
// Batch plumbing.

Matrix vstack(const Matrix& a, const Matrix& b) {
  if (b.rows() == 0) return a;
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

// Rows idx[begin..begin+count), cyclic over the index list.
Matrix take_rows(const Matrix& x, const std::vector<int>& idx, int begin,
                 int count) {
  Matrix out(count, x.cols());
  for (int i = 0; i < count; ++i)
    out.row(i) = x.row(idx[(begin + i) % idx.size()]);
  return out;
}

std::vector<int> take_labels(const std::vector<int>& labels,
                             const std::vector<int>& idx, int begin,
                             int count) {
  std::vector<int> out(count);
  for (int i = 0; i < count; ++i) out[i] = labels[idx[(begin + i) % idx.size()]];
  return out;
}

std::vector<int> uniform_indices(Rng& rng, int pool, int n) {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(pool)));
  return out;
}

void track_norms(const Graph& g, Var z, double& worst) {
  const Matrix& m = g.value(z);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    worst = std::max(worst, std::abs(m.row(i).norm() - 1.0));
}

std::vector<double> true_class_probs(const Matrix& probs,
                                     const std::vector<int>& labels) {
  std::vector<double> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    out[i] = probs(static_cast<Eigen::Index>(i), labels[i]);
  return out;
}

int capped_epoch_size(const std::vector<int>& counts, int cap) {
  int n = epoch_size(counts);
  if (cap > 0) n = std::min(n, cap);
  return n;
}

void validate(const DomainDataset& data, const TrainConfig& cfg) {
  if (data.sources.empty())
    throw ContractError("fit: need at least one source domain");
  if (data.target_labeled.empty())
    throw ContractError("fit: labeled target pool is empty");
  for (size_t e = 0; e < data.sources.size(); ++e)
    if (data.sources[e].empty())
      throw ContractError("fit: source pool " + std::to_string(e) +
                          " is empty");
  const int dim = data.manifest.total_dim();
  auto check_dims = [&](const SampleSet& set, const char* which) {
    for (const Sample& s : set)
      if (s.x.size() != dim)
        throw ContractError(std::string("fit: ") + which + " feature width " +
                            std::to_string(s.x.size()) + " != manifest " +
                            std::to_string(dim));
  };
  for (const SampleSet& s : data.sources) check_dims(s, "source");
  check_dims(data.target_labeled, "target-labeled");
  check_dims(data.target_unlabeled, "target-unlabeled");
  auto check_labels = [&](const SampleSet& set, const char* which) {
    for (const Sample& s : set)
      if (s.label < 0 || s.label >= data.manifest.classes)
        throw ContractError(std::string("fit: ") + which +
                            " label out of range");
  };
  for (const SampleSet& s : data.sources) check_labels(s, "source");
  check_labels(data.target_labeled, "target-labeled");
  if (cfg.epochs < 0) throw ContractError("fit: epochs must be >= 0");
  if (cfg.batch < 1) throw ContractError("fit: batch must be >= 1");
  if (!(cfg.lr > 0)) throw ContractError("fit: lr must be positive");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1))
    throw ContractError("fit: betas must lie in [0, 1)");
  if (!(cfg.delta > 0 && cfg.delta <= 1))
    throw ContractError("fit: delta must lie in (0, 1]");
  if (cfg.latent_dim < 1 || cfg.extractor_hidden < 1 ||
      cfg.classifier_hidden < 1 || cfg.decoder_hidden < 1)
    throw ContractError("fit: layer widths must be >= 1");
}

}  // namespace

// ---------------------------------------------------------------------------
// AMSGrad

AmsGrad::AmsGrad(int n_slots, double lr, double beta1, double beta2, double eps)
    : slots_(static_cast<size_t>(n_slots)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void AmsGrad::step(int slot, const std::string& name, Matrix& param,
                   const Matrix& grad) {
  if (slot < 0 || static_cast<size_t>(slot) >= slots_.size())
    throw ContractError("optimizer: slot out of range");
  if (grad.rows() != param.rows() || grad.cols() != param.cols())
    throw ShapeError("optimizer: gradient shape mismatch for " + name);
  if (!grad.allFinite())
    throw NumericError("optimizer: non-finite gradient for " + name);
  Slot& s = slots_[static_cast<size_t>(slot)];
  if (!s.init) {
    s.m = Matrix::Zero(param.rows(), param.cols());
    s.v = s.m;
    s.vhat = s.m;
    s.init = true;
  }
  s.t += 1;
  s.m = beta1_ * s.m + (1.0 - beta1_) * grad;
  s.v = beta2_ * s.v + (1.0 - beta2_) * grad.cwiseProduct(grad);
  Matrix prev_vhat = s.vhat;
  s.vhat = s.vhat.cwiseMax(s.v);
  if (((s.vhat - prev_vhat).array() < 0.0).any()) vhat_monotone_ = false;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
  Matrix mhat = s.m / c1;
  Matrix vcorr = s.vhat / c2;
  param.array() -= lr_ * mhat.array() / (vcorr.array().sqrt() + eps_);
  total_steps_ += 1;
}

// ---------------------------------------------------------------------------
// Inference helpers

Matrix predict_target(const ModelParams& params, const Matrix& x) {
  Graph g;
  ModelVars m = insert_params(g, params, false);
  Var z = forward_target(g, m, g.constant(x));
  return g.value(fused_probs(g, m, z, params.source_weights));
}

Matrix predict_source(const ModelParams& params, const Matrix& x, int source) {
  Graph g;
  ModelVars m = insert_params(g, params, false);
  SourceForward f = forward_source(g, m, g.constant(x), source);
  return g.value(class_probs(g, m, f.latent, source));
}

Matrix target_latents(const ModelParams& params, const Matrix& x) {
  Graph g;
  ModelVars m = insert_params(g, params, false);
  return g.value(forward_target(g, m, g.constant(x)));
}

Matrix source_latents(const ModelParams& params, const Matrix& x, int source) {
  Graph g;
  ModelVars m = insert_params(g, params, false);
  return g.value(forward_source(g, m, g.constant(x), source).latent);
}

// ---------------------------------------------------------------------------
// Report serialization

std::string TrainReport::to_json() const {
  ordered_json j;
  j["total_steps"] = total_steps;
  j["vhat_monotone"] = vhat_monotone;
  j["max_unit_norm_dev"] = max_unit_norm_dev;
  j["epochs"] = ordered_json::array();
  for (const EpochRecord& e : epochs) {
    ordered_json je;
    je["epoch"] = e.epoch;
    je["w_t"] = e.w_t;
    je["epsilon"] = e.epsilon;
    je["scbs_updated"] = e.scbs_updated;
    je["lc_t"] = e.lc_t;
    je["lr_t"] = e.lr_t;
    je["lc_s"] = e.lc_s;
    je["lp"] = e.lp;
    je["lr_s"] = e.lr_s;
    je["total"] = e.total;
    je["source_weights"] = e.source_weights;
    je["scbs_target"] = e.scbs_target;
    je["scbs_sources"] = e.scbs_sources;
    std::vector<int> kept(e.prototypes_kept.begin(), e.prototypes_kept.end());
    je["prototypes_kept"] = kept;
    je["guard_rows"] = e.guard_rows;
    je["triplet_skips"] = e.triplet_skips;
    j["epochs"].push_back(std::move(je));
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Training loop

std::pair<ModelParams, TrainReport> fit_multi(const DomainDataset& data,
                                              const TrainConfig& cfg) {
  validate(data, cfg);
  const int E = static_cast<int>(data.sources.size());
  const int C = data.manifest.classes;
  const ViewManifest& mf = data.manifest;

  NetworkShape shape =
      NetworkShape::defaults(mf, cfg.latent_dim, cfg.extractor_hidden,
                             cfg.classifier_hidden, cfg.decoder_hidden);
  ModelParams params = ModelParams::init(shape, E, cfg.use_translator,
                                         derive_seed(cfg.seed, "train.init"));

  TrainReport report;
  if (cfg.epochs == 0) return {std::move(params), std::move(report)};

  // Pools as dense matrices.
  const Matrix xt = stack_features(data.target_labeled);
  const std::vector<int> yt = labels_of(data.target_labeled);
  const Matrix xu = stack_features(data.target_unlabeled);
  const Matrix xtu = vstack(xt, xu);
  const int n_u = static_cast<int>(xu.rows());
  const int n_tu = static_cast<int>(xtu.rows());
  std::vector<Matrix> xs(E);
  std::vector<std::vector<int>> ys(E);
  for (int e = 0; e < E; ++e) {
    xs[e] = stack_features(data.sources[e]);
    ys[e] = labels_of(data.sources[e]);
  }

  const std::vector<int> counts_t = class_counts(data.target_labeled, C);
  std::vector<std::vector<int>> counts_s(E);
  for (int e = 0; e < E; ++e) counts_s[e] = class_counts(data.sources[e], C);

  ScbsState scbs_t = ScbsState::init(counts_t, cfg.epochs, cfg.delta);
  std::vector<ScbsState> scbs_s;
  for (int e = 0; e < E; ++e)
    scbs_s.push_back(ScbsState::init(counts_s[e], cfg.epochs, cfg.delta));

  const double l1 = cfg.weights.lambda1;
  const double l2 = cfg.weights.lambda2;
  const double l3 = cfg.weights.lambda3;

  // Bootstrap: prototypes and class difficulties from the initial model.
  Prototypes protos;
  if (l2 != 0.0)
    protos = estimate_prototypes(target_latents(params, xt), yt, C, nullptr);
  ClassDistribution diff_t =
      difficulty(true_class_probs(predict_target(params, xt), yt), yt, C);
  std::vector<ClassDistribution> diff_s(E);
  for (int e = 0; e < E; ++e)
    diff_s[e] = difficulty(
        true_class_probs(predict_source(params, xs[e], e), ys[e]), ys[e], C);

  ParamRefs refs = collect_refs(params);
  AmsGrad opt(static_cast<int>(refs.tensors.size()), cfg.lr, cfg.beta1,
              cfg.beta2, cfg.eps);

  // Applies one optimizer update from a finished backward pass.
  auto apply_step = [&](Graph& g, const std::vector<Var>& vars) {
    for (size_t i = 0; i < vars.size(); ++i)
      if (g.has_grad(vars[i]))
        opt.step(static_cast<int>(i), refs.names[i], *refs.tensors[i],
                 g.grad(vars[i]));
  };

  const bool target_step_live = (l1 != 0.0) || (l3 != 0.0);
  const bool source_step_live = (l1 != 0.0) || (l2 != 0.0) || (l3 != 0.0);

  for (int t = 1; t <= cfg.epochs; ++t) {
    // Epoch randomness, consumed in a fixed documented order: the admission
    // draw, the target epoch set, per-source label/prediction sets, then the
    // uniform target-side index lists.
    Rng erng(derive_seed(cfg.seed, "train.epoch", static_cast<uint64_t>(t)));
    const double eps_t = erng.uniform();
    scbs_update(scbs_t, eps_t, diff_t);
    for (int e = 0; e < E; ++e) scbs_update(scbs_s[e], eps_t, diff_s[e]);

    const int nt_set = capped_epoch_size(counts_t, cfg.epoch_set_cap);
    const int bt = std::min(cfg.batch, nt_set);
    const int steps = (nt_set + bt - 1) / bt;
    std::vector<int> set_t = draw_epoch(yt, C, scbs_t.current, nt_set, erng);

    std::vector<std::vector<int>> set_a(E), set_b(E);
    std::vector<int> bs(E);
    for (int e = 0; e < E; ++e) {
      const int ns_set = capped_epoch_size(counts_s[e], cfg.epoch_set_cap);
      bs[e] = std::min(cfg.batch, ns_set);
      set_a[e] = draw_epoch(ys[e], C, scbs_s[e].current, ns_set, erng);
      set_b[e] = draw_epoch(ys[e], C, scbs_s[e].current, ns_set, erng);
    }
    std::vector<int> idx_tu = uniform_indices(erng, n_tu, steps * bt);
    std::vector<int> idx_u =
        n_u > 0 ? uniform_indices(erng, n_u, steps * bt) : std::vector<int>{};

    EpochRecord rec;
    rec.epoch = t;
    rec.w_t = cosine_weight(t, cfg.epochs);
    rec.epsilon = eps_t;
    rec.scbs_updated = eps_t <= cfg.delta;
    rec.source_weights = params.source_weights;
    rec.lc_s.assign(E, 0.0);
    rec.lp.assign(E, 0.0);
    rec.lr_s.assign(E, 0.0);

    for (int k = 0; k < steps; ++k) {
      // ----- target step -----
      if (target_step_live) {
        Graph g;
        ModelVars mv = insert_params(g, params, true);
        std::vector<Var> vars;
        collect_vars(mv, vars);

        Var xa = g.constant(take_rows(xt, set_t, k * bt, bt));
        std::vector<int> la = take_labels(yt, set_t, k * bt, bt);
        Var za = forward_target(g, mv, xa);
        track_norms(g, za, report.max_unit_norm_dev);

        Var total{};
        bool has_total = false;
        auto add_term = [&](Var v, double s) {
          Var scaled = g.scale(v, s);
          total = has_total ? g.add(total, scaled) : scaled;
          has_total = true;
        };

        if (l1 != 0.0) {
          Var xb = g.constant(take_rows(xtu, idx_tu, k * bt, bt));
          Var zb = forward_target(g, mv, xb);
          track_norms(g, zb, report.max_unit_norm_dev);
          Var yb = fused_probs(g, mv, zb, params.source_weights);
          Var lc = cmmd(g, za, onehot_constant(g, la, C), zb, yb, cfg.kernel);
          rec.lc_t += g.scalar_value(lc);
          add_term(lc, l1);
        }
        if (l3 != 0.0) {
          Var lr = recon_loss(g, mv, za, xa, mf);
          if (n_u > 0) {
            Var xub = g.constant(take_rows(xu, idx_u, k * bt, bt));
            Var zu = forward_target(g, mv, xub);
            track_norms(g, zu, report.max_unit_norm_dev);
            lr = g.add(lr, recon_loss(g, mv, zu, xub, mf));
          }
          rec.lr_t += g.scalar_value(lr);
          add_term(lr, l3);
        }
        g.backward(total);
        apply_step(g, vars);
        rec.guard_rows += g.guard_events();
      }

      // ----- source step -----
      if (source_step_live) {
        Graph g;
        ModelVars mv = insert_params(g, params, true);
        std::vector<Var> vars;
        collect_vars(mv, vars);

        Var total{};
        bool has_total = false;
        auto add_term = [&](Var v, double s) {
          Var scaled = g.scale(v, s);
          total = has_total ? g.add(total, scaled) : scaled;
          has_total = true;
        };

        for (int e = 0; e < E; ++e) {
          Var xa = g.constant(take_rows(xs[e], set_a[e], k * bs[e], bs[e]));
          std::vector<int> la = take_labels(ys[e], set_a[e], k * bs[e], bs[e]);
          SourceForward fa = forward_source(g, mv, xa, e);
          track_norms(g, fa.latent, report.max_unit_norm_dev);

          if (l1 != 0.0) {
            Var xb = g.constant(take_rows(xs[e], set_b[e], k * bs[e], bs[e]));
            SourceForward fb = forward_source(g, mv, xb, e);
            track_norms(g, fb.latent, report.max_unit_norm_dev);
            Var yb = class_probs(g, mv, fb.latent, e);
            Var lc = cmmd(g, fa.latent, onehot_constant(g, la, C), fb.latent,
                          yb, cfg.kernel);
            rec.lc_s[e] += g.scalar_value(lc);
            add_term(lc, l1 / E);
          }
          if (l2 != 0.0) {
            TripletStats stats;
            Var lp = prototype_triplet_loss(g, protos.p, fa.latent, la,
                                            cfg.weights.alpha, &stats);
            rec.triplet_skips += stats.skipped_classes;
            rec.lp[e] += g.scalar_value(lp);
            add_term(lp, l2 * params.source_weights[e]);
          }
          if (l3 != 0.0) {
            Var lr = recon_loss(g, mv, fa.latent, fa.translated, mf);
            rec.lr_s[e] += g.scalar_value(lr);
            add_term(lr, l3 / E);
          }
        }
        g.backward(total);
        apply_step(g, vars);
        rec.guard_rows += g.guard_events();
      }
    }

    // Epoch means.
    rec.lc_t /= steps;
    rec.lr_t /= steps;
    for (int e = 0; e < E; ++e) {
      rec.lc_s[e] /= steps;
      rec.lp[e] /= steps;
      rec.lr_s[e] /= steps;
    }
    rec.total = msource_total(rec.lc_t, rec.lr_t, rec.lc_s, rec.lp, rec.lr_s,
                              params.source_weights, cfg.weights);

    // End-of-epoch refresh: prototypes, class difficulties, fusion weights.
    if (l2 != 0.0) {
      protos = estimate_prototypes(target_latents(params, xt), yt, C, &protos);
      rec.prototypes_kept = protos.kept_previous;
    }
    diff_t = difficulty(true_class_probs(predict_target(params, xt), yt), yt, C);
    for (int e = 0; e < E; ++e)
      diff_s[e] = difficulty(
          true_class_probs(predict_source(params, xs[e], e), ys[e]), ys[e], C);
    if (l1 != 0.0 && E > 1) params.source_weights = msource_weights(rec.lc_s);

    rec.scbs_target = scbs_t.current;
    for (int e = 0; e < E; ++e) rec.scbs_sources.push_back(scbs_s[e].current);
    report.epochs.push_back(std::move(rec));
  }

  report.vhat_monotone = opt.vhat_monotone();
  report.total_steps = opt.total_steps();
  return {std::move(params), std::move(report)};
}

std::pair<ModelParams, TrainReport> fit(const DomainDataset& data,
                                        const TrainConfig& cfg) {
  if (data.sources.size() != 1)
    throw ContractError("fit: expected exactly one source pool, got " +
                        std::to_string(data.sources.size()) +
                        "; use fit_multi");
  return fit_multi(data, cfg);
}

}  // namespace flare

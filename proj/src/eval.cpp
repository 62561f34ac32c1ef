#include "flare/eval.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>

#include "flare/error.hpp"
#include "flare/losses.hpp"
#include "flare/rng.hpp"
#include "flare/sampler.hpp"

namespace flare {

namespace {

// Runs fn(0), ..., fn(n-1) across up to `jobs` threads.  Work items are
// independent and write disjoint slots, so scheduling order cannot change
// results.  The first exception thrown by any item is rethrown on the caller
// once every worker has joined.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(jobs));
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::vector<int> checked_labels(const SampleSet& pool, const char* what) {
  if (pool.empty())
    throw ContractError(std::string(what) + ": pool is empty");
  std::vector<int> labels = labels_of(pool);
  for (int y : labels)
    if (y < 0)
      throw ContractError(std::string(what) +
                          ": every sample needs a label");
  return labels;
}

MeanStderr mean_stderr(const std::vector<double>& xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return out;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return out;
}

}  // namespace

ConfusionMatrix confusion(const Matrix& probs, const std::vector<int>& labels,
                          double threshold) {
  if (probs.cols() != 2)
    throw ContractError("confusion: need two probability columns");
  if (static_cast<size_t>(probs.rows()) != labels.size())
    throw ContractError("confusion: one label per probability row");
  ConfusionMatrix cm;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ContractError("confusion: labels must be 0 or 1");
    const bool pred = probs(static_cast<Eigen::Index>(i), 1) >= threshold;
    const bool truth = labels[i] == 1;
    if (truth)
      (pred ? cm.tp : cm.fn)++;
    else
      (pred ? cm.fp : cm.tn)++;
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.sen = ratio(double(cm.tp), double(cm.tp + cm.fn));
  r.spe = ratio(double(cm.tn), double(cm.tn + cm.fp));
  const double precision = ratio(double(cm.tp), double(cm.tp + cm.fp));
  r.f1 = ratio(2.0 * precision * r.sen, precision + r.sen);
  r.gmean = std::sqrt(r.sen * r.spe);
  return r;
}

MetricsReport evaluate(const ModelParams& params, const SampleSet& pool) {
  const std::vector<int> labels = checked_labels(pool, "evaluate");
  return metrics(confusion(predict_target(params, stack_features(pool)),
                           labels));
}

AggregateMetrics aggregate(const std::vector<MetricsReport>& runs) {
  AggregateMetrics agg;
  agg.n = static_cast<int>(runs.size());
  std::vector<double> xs(runs.size());
  auto fill = [&](double MetricsReport::*field) {
    for (size_t i = 0; i < runs.size(); ++i) xs[i] = runs[i].*field;
    return mean_stderr(xs);
  };
  agg.sen = fill(&MetricsReport::sen);
  agg.spe = fill(&MetricsReport::spe);
  agg.f1 = fill(&MetricsReport::f1);
  agg.gmean = fill(&MetricsReport::gmean);
  return agg;
}

// ---------------------------------------------------------------------------
// Stratified cross-validation folds.

std::vector<int> stratified_folds(const std::vector<int>& labels, int classes,
                                  int folds, uint64_t seed) {
  if (folds < 2) throw ContractError("stratified_folds: need >= 2 folds");
  if (classes < 1) throw ContractError("stratified_folds: need >= 1 class");
  std::vector<std::vector<int>> members(static_cast<size_t>(classes));
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ContractError("stratified_folds: label outside [0, classes)");
    members[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < classes; ++c)
    if (members[static_cast<size_t>(c)].size() < static_cast<size_t>(folds))
      throw InfeasibleError(
          "stratified_folds: class " + std::to_string(c) + " has only " +
          std::to_string(members[static_cast<size_t>(c)].size()) +
          " samples; try fewer folds");
  std::vector<int> fold_of(labels.size(), -1);
  for (int c = 0; c < classes; ++c) {
    std::vector<int>& idx = members[static_cast<size_t>(c)];
    Rng rng(derive_seed(seed, "folds.class", static_cast<uint64_t>(c)));
    rng.shuffle(idx);
    for (size_t k = 0; k < idx.size(); ++k)
      fold_of[static_cast<size_t>(idx[k])] = static_cast<int>(k) % folds;
  }
  return fold_of;
}

GridResult grid_search(const DomainDataset& data, const TrainConfig& base,
                       const GridSpec& grid, int folds, uint64_t seed,
                       int jobs) {
  if (grid.lambda2.empty() || grid.lambda3.empty() || grid.alpha.empty())
    throw ContractError("grid_search: every grid axis needs >= 1 value");
  const std::vector<int> yt = checked_labels(data.target_labeled,
                                             "grid_search");
  const std::vector<int> fold_of = stratified_folds(
      yt, data.manifest.classes, folds, derive_seed(seed, "grid.folds"));

  // Pre-split the labeled target pool once; every cell reuses the same folds
  // and the same per-fold fit seed so cells differ only in their weights.
  std::vector<SampleSet> train_pool(static_cast<size_t>(folds));
  std::vector<SampleSet> valid_pool(static_cast<size_t>(folds));
  for (int f = 0; f < folds; ++f)
    for (size_t i = 0; i < data.target_labeled.size(); ++i)
      (fold_of[i] == f ? valid_pool : train_pool)[static_cast<size_t>(f)]
          .push_back(data.target_labeled[i]);

  std::vector<GridCell> table;
  for (double l2 : grid.lambda2)
    for (double l3 : grid.lambda3)
      for (double a : grid.alpha) {
        GridCell cell;
        cell.lambda2 = l2;
        cell.lambda3 = l3;
        cell.alpha = a;
        table.push_back(cell);
      }

  parallel_for(static_cast<int>(table.size()), jobs, [&](int i) {
    GridCell& cell = table[static_cast<size_t>(i)];
    for (int f = 0; f < folds; ++f) {
      TrainConfig cfg = base;
      cfg.weights.lambda2 = cell.lambda2;
      cfg.weights.lambda3 = cell.lambda3;
      cfg.weights.alpha = cell.alpha;
      cfg.seed = derive_seed(seed, "grid.fit", static_cast<uint64_t>(f));
      DomainDataset cut;
      cut.manifest = data.manifest;
      cut.sources = data.sources;
      cut.target_labeled = train_pool[static_cast<size_t>(f)];
      cut.target_unlabeled = data.target_unlabeled;
      auto [params, report] = fit_multi(cut, cfg);
      (void)report;
      cell.fold_gmeans.push_back(
          evaluate(params, valid_pool[static_cast<size_t>(f)]).gmean);
    }
    cell.mean_gmean = std::accumulate(cell.fold_gmeans.begin(),
                                      cell.fold_gmeans.end(), 0.0) /
                      static_cast<double>(folds);
  });

  GridResult result;
  result.table = table;
  result.best = table.front();
  for (const GridCell& cell : table) {
    const auto key = std::tie(cell.lambda2, cell.lambda3, cell.alpha);
    const auto best_key = std::tie(result.best.lambda2, result.best.lambda3,
                                   result.best.alpha);
    if (cell.mean_gmean > result.best.mean_gmean ||
        (cell.mean_gmean == result.best.mean_gmean && key < best_key))
      result.best = cell;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Baselines: fused forward path without a translator, trained on plain
// cross-entropy.  The boosted variant swaps the shuffled epoch permutation
// for sampler-drawn epoch sets, mirroring the main trainer's epoch shape.

const char* to_string(Baseline b) {
  switch (b) {
    case Baseline::SourceOnly: return "source-only";
    case Baseline::TargetFcn: return "fcn";
    case Baseline::TargetFcnScbs: return "fcn-scbs";
    case Baseline::JointDomain: return "joint";
  }
  throw ContractError("to_string: unknown baseline");
}

namespace {

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
  std::vector<int> out(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    out[static_cast<size_t>(i)] = labels[idx[(begin + i) % idx.size()]];
  return out;
}

std::vector<double> true_class_probs(const Matrix& probs,
                                     const std::vector<int>& labels) {
  std::vector<double> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    out[i] = probs(static_cast<Eigen::Index>(i), labels[i]);
  return out;
}

ModelParams train_fcn(const ViewManifest& mf, const SampleSet& pool,
                      const TrainConfig& cfg, bool boosted, uint64_t seed) {
  if (pool.empty())
    throw ContractError("baseline: training pool is empty");
  const int C = mf.classes;
  NetworkShape shape =
      NetworkShape::defaults(mf, cfg.latent_dim, cfg.extractor_hidden,
                             cfg.classifier_hidden, cfg.decoder_hidden);
  ModelParams params =
      ModelParams::init(shape, 1, false, derive_seed(seed, "train.init"));
  if (cfg.epochs == 0) return params;

  const Matrix x = stack_features(pool);
  std::vector<int> y = labels_of(pool);
  for (int label : y)
    if (label < 0 || label >= C)
      throw ContractError("baseline: label out of range");
  const int n = static_cast<int>(pool.size());
  const std::vector<int> counts = class_counts(pool, C);

  ScbsState scbs = ScbsState::init(counts, cfg.epochs, cfg.delta);
  ClassDistribution diff;
  if (boosted)
    diff = difficulty(true_class_probs(predict_target(params, x), y), y, C);

  std::vector<Matrix*> tensors;
  std::vector<std::string> names;
  for_each_tensor(params, [&](const std::string& nm, Matrix& m) {
    tensors.push_back(&m);
    names.push_back(nm);
  });
  AmsGrad opt(static_cast<int>(tensors.size()), cfg.lr, cfg.beta1, cfg.beta2,
              cfg.eps);

  for (int t = 1; t <= cfg.epochs; ++t) {
    Rng erng(derive_seed(seed, "train.epoch", static_cast<uint64_t>(t)));
    std::vector<int> set;
    if (boosted) {
      const double eps_t = erng.uniform();
      scbs_update(scbs, eps_t, diff);
      int n_set = epoch_size(counts);
      if (cfg.epoch_set_cap > 0) n_set = std::min(n_set, cfg.epoch_set_cap);
      set = draw_epoch(y, C, scbs.current, n_set, erng);
    } else {
      set.resize(static_cast<size_t>(n));
      std::iota(set.begin(), set.end(), 0);
      erng.shuffle(set);
    }
    const int b = std::min(cfg.batch, static_cast<int>(set.size()));
    const int steps = (static_cast<int>(set.size()) + b - 1) / b;
    for (int k = 0; k < steps; ++k) {
      Graph g;
      ModelVars mv = insert_params(g, params, true);
      std::vector<Var> vars;
      auto push_mlp = [&](const MlpVars& net) {
        for (size_t l = 0; l < net.w.size(); ++l) {
          vars.push_back(net.w[l]);
          vars.push_back(net.b[l]);
        }
      };
      for (const MlpVars& tr : mv.translators) push_mlp(tr);
      push_mlp(mv.extractor);
      for (const MlpVars& c : mv.classifiers) push_mlp(c);
      for (const MlpVars& d : mv.decoders) push_mlp(d);

      Var xb = g.constant(take_rows(x, set, k * b, b), "batch");
      Var z = forward_target(g, mv, xb);
      Var ce = cross_entropy(g, class_probs(g, mv, z, 0),
                             take_labels(y, set, k * b, b));
      g.backward(ce);
      for (size_t i = 0; i < vars.size(); ++i)
        if (g.has_grad(vars[i]))
          opt.step(static_cast<int>(i), names[i], *tensors[i],
                   g.grad(vars[i]));
    }
    if (boosted)
      diff = difficulty(true_class_probs(predict_target(params, x), y), y, C);
  }
  return params;
}

SampleSet pool_sources(const DomainDataset& data) {
  SampleSet pooled;
  for (const SampleSet& s : data.sources)
    pooled.insert(pooled.end(), s.begin(), s.end());
  return pooled;
}

}  // namespace

std::vector<BaselineResult> run_baselines(const DomainDataset& data,
                                          const TrainConfig& cfg) {
  if (data.sources.empty())
    throw ContractError("run_baselines: need at least one source pool");
  const SampleSet sources = pool_sources(data);
  SampleSet joint = sources;
  joint.insert(joint.end(), data.target_labeled.begin(),
               data.target_labeled.end());

  std::vector<BaselineResult> out;
  auto run = [&](Baseline kind, const SampleSet& pool, bool boosted) {
    const uint64_t seed =
        derive_seed(cfg.seed, std::string("baseline.") + to_string(kind));
    ModelParams params = train_fcn(data.manifest, pool, cfg, boosted, seed);
    out.push_back({kind, evaluate(params, data.target_unlabeled)});
  };
  run(Baseline::SourceOnly, sources, false);
  run(Baseline::TargetFcn, data.target_labeled, false);
  run(Baseline::TargetFcnScbs, data.target_labeled, true);
  run(Baseline::JointDomain, joint, false);
  return out;
}

// ---------------------------------------------------------------------------
// Repeated-partition benchmark.

std::vector<MethodResult> run_bench(const BenchSpec& spec) {
  if (spec.synth.sites < 2)
    throw ContractError("run_bench: need >= 2 sites (sources + target)");
  if (spec.repetitions < 1)
    throw ContractError("run_bench: need >= 1 repetition");

  const std::vector<std::string> methods = {"flare",      "m-flare",
                                            "source-only", "fcn",
                                            "fcn-scbs",    "joint"};
  const int R = spec.repetitions;
  std::vector<std::array<MetricsReport, 6>> slots(static_cast<size_t>(R));

  parallel_for(R, spec.jobs, [&](int r) {
    const uint64_t rep_seed =
        derive_seed(spec.master_seed, "bench.rep", static_cast<uint64_t>(r));
    SynthSpec synth = spec.synth;
    synth.seed = rep_seed;
    std::vector<SampleSet> sites = synth_generate(synth);
    const SampleSet target = std::move(sites.back());
    sites.pop_back();

    const uint64_t part_seed = derive_seed(rep_seed, "partition");
    TrainConfig cfg = spec.config;
    cfg.seed = rep_seed;

    // Single-source run; the same partition seed keeps target pools
    // identical across dataset variants.
    DomainDataset single = make_multi_domain({sites.front()}, target,
                                             spec.synth.manifest, spec.setting,
                                             part_seed);
    std::vector<SampleSet> multi_sources =
        sites.size() == 1 ? std::vector<SampleSet>{sites[0], sites[0]}
                          : sites;
    DomainDataset multi = make_multi_domain(multi_sources, target,
                                            spec.synth.manifest, spec.setting,
                                            part_seed);

    std::array<MetricsReport, 6>& slot = slots[static_cast<size_t>(r)];
    slot[0] = evaluate(fit(single, cfg).first, single.target_unlabeled);
    slot[1] = evaluate(fit_multi(multi, cfg).first, multi.target_unlabeled);
    const std::vector<BaselineResult> base = run_baselines(single, cfg);
    for (size_t b = 0; b < base.size(); ++b)
      slot[2 + b] = base[b].metrics;
  });

  std::vector<MethodResult> out;
  for (size_t m = 0; m < methods.size(); ++m) {
    MethodResult res;
    res.method = methods[m];
    for (int r = 0; r < R; ++r)
      res.runs.push_back(slots[static_cast<size_t>(r)][m]);
    res.agg = aggregate(res.runs);
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace flare

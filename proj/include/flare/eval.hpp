#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flare/data.hpp"
#include "flare/trainer.hpp"

namespace flare {

// Class 1 is the positive (rarer, clinically severe) class throughout.
struct ConfusionMatrix {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
};

// Positive iff p(class 1) >= threshold; ties count as positive.  Probability
// rows must have exactly two columns.
ConfusionMatrix confusion(const Matrix& probs, const std::vector<int>& labels,
                          double threshold = 0.5);

struct MetricsReport {
  double sen = 0, spe = 0, f1 = 0, gmean = 0;
};

// SEN = TP/(TP+FN), SPE = TN/(TN+FP), F1 harmonic of SEN and precision,
// G-mean = sqrt(SEN * SPE); every 0/0 resolves to 0.
MetricsReport metrics(const ConfusionMatrix& cm);

// Fused-classifier predictions of `pool` against its labels.
MetricsReport evaluate(const ModelParams& params, const SampleSet& pool);

struct MeanStderr {
  double mean = 0;
  double se = 0;  // sample standard deviation / sqrt(n); 0 when n < 2
};

struct AggregateMetrics {
  MeanStderr sen, spe, f1, gmean;
  int n = 0;
};

AggregateMetrics aggregate(const std::vector<MetricsReport>& runs);

// ---------------------------------------------------------------------------
// Cross-validated grid search over (lambda2, lambda3, alpha) on the labeled
// target pool.

struct GridSpec {
  std::vector<double> lambda2{10, 50, 100, 500, 1000};
  std::vector<double> lambda3{2e-4, 1e-3, 2e-3, 5e-3, 2e-2};
  std::vector<double> alpha{0, 0.4, 0.8, 1.2, 1.6};
};

struct GridCell {
  double lambda2 = 0, lambda3 = 0, alpha = 0;
  double mean_gmean = 0;
  std::vector<double> fold_gmeans;
};

struct GridResult {
  GridCell best;
  std::vector<GridCell> table;  // grid order: lambda2, then lambda3, then alpha
};

// Class-stratified fold assignment: returns fold index per sample; per-fold
// class counts differ by at most one.  Classes smaller than `folds` raise
// InfeasibleError suggesting fewer folds.
std::vector<int> stratified_folds(const std::vector<int>& labels, int classes,
                                  int folds, uint64_t seed);

// Trains one model per (cell, fold) with the held-out fold as validation,
// scores mean held-out G-mean, and picks the argmax; ties break toward the
// lexicographically smaller (lambda2, lambda3, alpha).  `jobs` > 1 fans the
// independent cells out over threads with a deterministic merge.
GridResult grid_search(const DomainDataset& data, const TrainConfig& base,
                       const GridSpec& grid, int folds, uint64_t seed,
                       int jobs = 1);

// ---------------------------------------------------------------------------
// Reference baselines sharing the FLARE forward path (unit-sphere extractor
// plus classifier, no translator) and trained with plain cross-entropy.

enum class Baseline {
  SourceOnly,     // trained on the pooled source data only
  TargetFcn,      // trained on the labeled target pool
  TargetFcnScbs,  // labeled target pool with the boosting sampler
  JointDomain,    // source and labeled target pooled together
};

const char* to_string(Baseline b);

struct BaselineResult {
  Baseline kind;
  MetricsReport metrics;
};

// Trains all four baselines and evaluates them on the unlabeled target pool
// (whose labels exist for evaluation only).
std::vector<BaselineResult> run_baselines(const DomainDataset& data,
                                          const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Repeated-partition benchmark: FLARE, the multi-source variant, and the four
// baselines on freshly generated and partitioned data per repetition.

struct BenchSpec {
  SynthSpec synth;  // last site is the target, the rest are sources
  Setting setting = Setting::Imbalanced;
  TrainConfig config;
  int repetitions = 10;
  uint64_t master_seed = 0;
  int jobs = 1;
};

struct MethodResult {
  std::string method;  // flare | m-flare | source-only | fcn | fcn-scbs | joint
  AggregateMetrics agg;
  std::vector<MetricsReport> runs;  // one per repetition, in repetition order
};

// With a single source site the multi-source variant runs on a cloned
// duplicate of that source.
std::vector<MethodResult> run_bench(const BenchSpec& spec);

}  // namespace flare

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flare/graph.hpp"

namespace flare {

struct ViewSpec {
  std::string name;
  int dim = 0;
};

// Describes how the flat feature vector splits into named views.
struct ViewManifest {
  std::vector<ViewSpec> views;
  int classes = 2;

  int total_dim() const;
  // Column offset of view v within the flat feature vector.
  int view_offset(int v) const;

  // Seven morphometric views over 237 features, binary labels.
  static ViewManifest defaults();
  static ViewManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

constexpr int kUnlabeled = -1;

struct Sample {
  Eigen::VectorXd x;
  int label = kUnlabeled;
  std::string site;
};

using SampleSet = std::vector<Sample>;

// Source pools, labeled target pool, unlabeled target pool.  D_u keeps its
// labels for evaluation, but training code never reads them.
struct DomainDataset {
  ViewManifest manifest;
  std::vector<SampleSet> sources;
  SampleSet target_labeled;
  SampleSet target_unlabeled;
};

enum class Setting { Balanced, Imbalanced };

Setting setting_from_string(const std::string& s);
const char* to_string(Setting s);

// Per-column z-scoring with population standard deviation.  Columns whose
// std falls below 1e-8 are dead and map to zero.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  std::vector<uint8_t> dead;

  static Standardizer fit(const SampleSet& train, int dim);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  void apply(SampleSet& set) const;
};

struct Partition {
  SampleSet train;
  SampleSet test;
};

// Clinical-style split for binary data where class 1 is the rarer, positive
// class: 30% of positives (ceil) train; the test side pairs every held-out
// positive with a uniformly drawn negative so the test set is balanced; all
// remaining negatives train.
Partition partition_balanced(const SampleSet& site, uint64_t seed);

// Stratified split keeping natural prevalence: ceil(30%) of every class
// trains, the rest tests.
Partition partition_imbalanced(const SampleSet& site, int classes,
                               uint64_t seed);

// CSV with header f0,...,f{D-1},label,site; an empty label cell marks an
// unlabeled row.  Doubles are written with 17 significant digits so a
// save/load round trip is exact.
SampleSet load_csv(const std::filesystem::path& path, const ViewManifest& mf,
                   bool require_labels);
void save_csv(const std::filesystem::path& path, const SampleSet& set,
              const ViewManifest& mf);

struct SynthSpec {
  ViewManifest manifest = ViewManifest::defaults();
  int sites = 2;
  std::vector<int> counts;  // per-class sample count, same for every site
  double separation = 3.0;  // distance between adjacent class means
  double shift = 1.0;       // magnitude of the per-site affine distortion
  double noise = 1.0;
  uint64_t seed = 0;
};

// Gaussian class clusters pushed through a per-site random affine map
// (identity + scaled random mixing, plus translation).  shift = 0 gives
// identically distributed sites.  Deterministic per seed.
std::vector<SampleSet> synth_generate(const SynthSpec& spec);

// Builds the training triple from one source site and one target site:
// partitions the target per `setting`, then standardizes each site on its
// own training portion (the full source acts as source training data).
DomainDataset make_tri_domain(const SampleSet& source, const SampleSet& target,
                              const ViewManifest& mf, Setting setting,
                              uint64_t seed);
DomainDataset make_multi_domain(const std::vector<SampleSet>& sources,
                                const SampleSet& target, const ViewManifest& mf,
                                Setting setting, uint64_t seed);

// Reduced-budget regime: class-stratified floor(ratio * n) of D_t, uniform
// floor(ratio * n) of D_u.  Ratios must lie in (0, 1]; emptying any class of
// D_t or emptying D_u is infeasible.
void subsample_regime(DomainDataset& ds, double labeled_ratio,
                      double unlabeled_ratio, uint64_t seed);

// Pool helpers used throughout training and evaluation.
Matrix stack_features(const SampleSet& set);
std::vector<int> labels_of(const SampleSet& set);
std::vector<int> class_counts(const SampleSet& set, int classes);

}  // namespace flare

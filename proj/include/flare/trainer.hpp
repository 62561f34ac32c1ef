#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flare/data.hpp"
#include "flare/losses.hpp"
#include "flare/model.hpp"
#include "flare/sampler.hpp"

namespace flare {

struct TrainConfig {
  int epochs = 300;
  int batch = 100;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossWeights weights;    // lambda1 / lambda2 / lambda3 / alpha
  KernelConfig kernel;    // feature kernel and ridge tau
  double delta = 0.3;     // sampler admission threshold
  bool use_translator = true;
  int latent_dim = 64;
  int extractor_hidden = 128;
  int classifier_hidden = 32;
  int decoder_hidden = 64;
  // Caps the per-epoch resampled set (0 = classes * largest class size).
  int epoch_set_cap = 0;
  uint64_t seed = 0;
};

// AMSGrad with bias correction on both moments; the running max of the
// second moment replaces it in the denominator and never decreases.  Each
// parameter tensor owns its own moments and step counter, so updates that
// touch only a subset of the model stay correct.
class AmsGrad {
 public:
  AmsGrad(int n_slots, double lr, double beta1, double beta2, double eps);

  // One update of `param` in place.  Non-finite gradients abort with the
  // parameter's name.
  void step(int slot, const std::string& name, Matrix& param,
            const Matrix& grad);

  bool vhat_monotone() const { return vhat_monotone_; }
  long total_steps() const { return total_steps_; }

 private:
  struct Slot {
    Matrix m, v, vhat;
    long t = 0;
    bool init = false;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  bool vhat_monotone_ = true;
  long total_steps_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double w_t = 0;
  double epsilon = 0;
  bool scbs_updated = false;
  // Epoch means of the loss terms; per-source vectors have one entry per
  // source domain.
  double lc_t = 0;
  double lr_t = 0;
  std::vector<double> lc_s, lp, lr_s;
  double total = 0;  // the full objective assembled from the means
  std::vector<double> source_weights;  // fusion weights in force this epoch
  ClassDistribution scbs_target;
  std::vector<ClassDistribution> scbs_sources;
  std::vector<uint8_t> prototypes_kept;  // end-of-epoch re-estimate fallbacks
  int guard_rows = 0;
  int triplet_skips = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double max_unit_norm_dev = 0.0;  // worst | ||z_i|| - 1 | seen in training
  bool vhat_monotone = true;
  long total_steps = 0;

  // Deterministic JSON (ordered keys, no timestamps).
  std::string to_json() const;
};

// Inference helpers (no gradients).  Target rows go through the shared
// extractor and the weight-fused classifiers; source rows go through their
// own translator and classifier.
Matrix predict_target(const ModelParams& params, const Matrix& x);
Matrix predict_source(const ModelParams& params, const Matrix& x, int source);
Matrix target_latents(const ModelParams& params, const Matrix& x);
Matrix source_latents(const ModelParams& params, const Matrix& x, int source);

// Trains on E >= 1 source pools plus the labeled/unlabeled target pools.
// Each paired step takes one optimizer step on the target terms and one on
// the source terms; sampling distributions, prototypes, class difficulties
// and fusion weights refresh once per epoch.
std::pair<ModelParams, TrainReport> fit_multi(const DomainDataset& data,
                                              const TrainConfig& cfg);

// Single-source convenience wrapper; requires exactly one source pool.
std::pair<ModelParams, TrainReport> fit(const DomainDataset& data,
                                        const TrainConfig& cfg);

}  // namespace flare

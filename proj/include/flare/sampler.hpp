#pragma once

#include <cstdint>
#include <vector>

#include "flare/rng.hpp"

namespace flare {

// Probabilities over classes; entries are non-negative and sum to one.
using ClassDistribution = std::vector<double>;

// r^q(j) = |S_j|^q / sum_k |S_k|^q.  q = 1 recovers the empirical class
// frequencies, q = 0 the uniform distribution.  Counts must be positive.
ClassDistribution base_prob(const std::vector<int>& counts, double q);

// Normalized mean self-information per class: probabilities of the true
// class are clamped to [1e-7, 1], averaged as -log p within each class and
// normalized across classes.  If every class is predicted perfectly the
// normalizer vanishes and the result falls back to uniform.
ClassDistribution difficulty(const std::vector<double>& true_class_prob,
                             const std::vector<int>& labels, int classes);

// Cosine ramp w_t = (1 - cos(t pi / T)) / 2, increasing from 0 at t = 0 to
// 1 at t = T.
double cosine_weight(int t, int total_epochs);

// Sampling distribution state for one domain.
struct ScbsState {
  ClassDistribution uniform;      // r^0
  ClassDistribution current;      // starts at r^1
  int t = 0;                      // epochs consumed
  int total_epochs = 0;           // T
  double delta = 0.3;             // admission threshold for the mixed update

  static ScbsState init(const std::vector<int>& counts, int total_epochs,
                        double delta = 0.3);
};

// One per-epoch update.  Advances t, then, when epsilon <= delta, moves the
// distribution to (1 - w_t) r^0 + w_t r_diff; otherwise the distribution is
// kept.  epsilon is drawn once per epoch by the caller.
void scbs_update(ScbsState& state, double epsilon,
                 const ClassDistribution& r_diff);

// Draws `n` indices into `labels` with replacement: first the class from
// `dist`, then a uniform member of that class.  A class with positive
// probability must be present in the pool.
std::vector<int> draw_epoch(const std::vector<int>& labels, int classes,
                            const ClassDistribution& dist, int n, Rng& rng);

// Default epoch-set size: classes * max_j |S_j|.
int epoch_size(const std::vector<int>& counts);

}  // namespace flare

#include "flare/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "flare/error.hpp"

namespace flare {

ClassDistribution base_prob(const std::vector<int>& counts, double q) {
  if (counts.empty()) throw ContractError("base_prob: no classes");
  ClassDistribution r(counts.size());
  double total = 0.0;
  for (size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] <= 0)
      throw ContractError("base_prob: class " + std::to_string(j) +
                          " has no samples");
    r[j] = std::pow(double(counts[j]), q);
    total += r[j];
  }
  for (double& v : r) v /= total;
  return r;
}

ClassDistribution difficulty(const std::vector<double>& true_class_prob,
                             const std::vector<int>& labels, int classes) {
  if (true_class_prob.size() != labels.size())
    throw ContractError("difficulty: one probability per label required");
  std::vector<double> info(classes, 0.0);
  std::vector<int> count(classes, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    int y = labels[i];
    if (y < 0 || y >= classes)
      throw ContractError("difficulty: label outside [0, classes)");
    double p = std::clamp(true_class_prob[i], 1e-7, 1.0);
    info[y] += -std::log(p);
    ++count[y];
  }
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    if (count[c] == 0)
      throw ContractError("difficulty: class " + std::to_string(c) +
                          " has no samples");
    info[c] /= double(count[c]);
    total += info[c];
  }
  ClassDistribution r(classes);
  if (total < 1e-12) {
    // Every prediction was (numerically) perfect; no class is harder.
    std::fill(r.begin(), r.end(), 1.0 / double(classes));
  } else {
    for (int c = 0; c < classes; ++c) r[c] = info[c] / total;
  }
  return r;
}

double cosine_weight(int t, int total_epochs) {
  if (total_epochs < 1) throw ContractError("cosine_weight: T must be >= 1");
  if (t < 0 || t > total_epochs)
    throw ContractError("cosine_weight: t outside [0, T]");
  return (1.0 - std::cos(double(t) * M_PI / double(total_epochs))) / 2.0;
}

ScbsState ScbsState::init(const std::vector<int>& counts, int total_epochs,
                          double delta) {
  if (total_epochs < 1) throw ContractError("ScbsState: T must be >= 1");
  if (delta < 0.0 || delta > 1.0)
    throw ContractError("ScbsState: delta must lie in [0, 1]");
  ScbsState s;
  s.uniform = base_prob(counts, 0.0);
  s.current = base_prob(counts, 1.0);
  s.t = 0;
  s.total_epochs = total_epochs;
  s.delta = delta;
  return s;
}

void scbs_update(ScbsState& state, double epsilon,
                 const ClassDistribution& r_diff) {
  if (r_diff.size() != state.current.size())
    throw ContractError("scbs_update: class arity mismatch");
  if (state.t >= state.total_epochs)
    throw ContractError("scbs_update: all epochs already consumed");
  ++state.t;
  if (epsilon <= state.delta) {
    double w = cosine_weight(state.t, state.total_epochs);
    for (size_t j = 0; j < state.current.size(); ++j)
      state.current[j] = (1.0 - w) * state.uniform[j] + w * r_diff[j];
  }
}

std::vector<int> draw_epoch(const std::vector<int>& labels, int classes,
                            const ClassDistribution& dist, int n, Rng& rng) {
  if (static_cast<int>(dist.size()) != classes)
    throw ContractError("draw_epoch: distribution arity mismatch");
  std::vector<std::vector<int>> by(classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ContractError("draw_epoch: label outside [0, classes)");
    by[labels[i]].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < classes; ++c)
    if (dist[c] > 0.0 && by[c].empty())
      throw ContractError("draw_epoch: class " + std::to_string(c) +
                          " has positive probability but no pool samples");
  std::vector<int> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    double u = rng.uniform();
    double acc = 0.0;
    int c = classes - 1;
    for (int j = 0; j < classes; ++j) {
      acc += dist[j];
      if (u < acc) {
        c = j;
        break;
      }
    }
    const auto& pool = by[c];
    out.push_back(pool[rng.uniform_int(pool.size())]);
  }
  return out;
}

int epoch_size(const std::vector<int>& counts) {
  if (counts.empty()) throw ContractError("epoch_size: no classes");
  return static_cast<int>(counts.size()) *
         *std::max_element(counts.begin(), counts.end());
}

}  // namespace flare

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flare/graph.hpp"

namespace flare {

struct GradCheckOptions {
  double step = 1e-5;   // central difference half-step
  double floor = 1e-4;  // relative-error denominator floor
  // Test hook: added to every analytic gradient entry before comparison so
  // the failure-detection path itself can be exercised.
  double inject_error = 0.0;
  // When positive, coordinates whose left and right one-sided slopes
  // disagree by more than this relative amount are skipped: the function is
  // locally nonsmooth there (a hinge, a rectifier boundary, a mined-index
  // flip) and a central difference measures the kink, not the adjoints.  A
  // wrong adjoint on a smooth coordinate is still reported.
  double kink_tol = 0.0;
  // When positive, the denominator floor is raised to this fraction of the
  // largest analytic gradient entry, so coordinates far below the dominant
  // scale are held to an absolute rather than relative standard.
  double rel_floor_scale = 0.0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_row = -1;
  int worst_col = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int kinks_skipped = 0;
  bool pass(double tol) const { return max_rel_err <= tol; }
};

// Builds the loss twice per perturbed entry and compares analytic adjoints
// against central finite differences:
//   rel = |a - n| / max(|a|, |n|, floor)
// `build_loss` receives a fresh graph plus parameter handles in the order of
// `params` and must return a 1 x 1 loss node.
GradCheckResult grad_check(
    const std::vector<Matrix>& params, const std::vector<std::string>& names,
    const std::function<Var(Graph&, const std::vector<Var>&)>& build_loss,
    const GradCheckOptions& opt = {});

}  // namespace flare

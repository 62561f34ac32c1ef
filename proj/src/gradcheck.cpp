#include "flare/gradcheck.hpp"

#include <cmath>

#include "flare/error.hpp"

namespace flare {

namespace {

double eval_loss(
    const std::vector<Matrix>& params,
    const std::function<Var(Graph&, const std::vector<Var>&)>& build_loss) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(g.constant(p));
  return g.scalar_value(build_loss(g, vars));
}

}  // namespace

GradCheckResult grad_check(
    const std::vector<Matrix>& params, const std::vector<std::string>& names,
    const std::function<Var(Graph&, const std::vector<Var>&)>& build_loss,
    const GradCheckOptions& opt) {
  if (names.size() != params.size())
    throw ContractError("grad_check: one name per parameter required");

  // Analytic pass.
  Graph g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (size_t p = 0; p < params.size(); ++p)
    vars.push_back(g.parameter(params[p], names[p]));
  Var loss = build_loss(g, vars);
  const double base = g.scalar_value(loss);
  g.backward(loss);

  std::vector<Matrix> analytic_all(params.size());
  double grad_scale = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    analytic_all[p] = g.has_grad(vars[p])
                          ? g.grad(vars[p])
                          : Matrix::Zero(params[p].rows(), params[p].cols());
    if (analytic_all[p].size() > 0)
      grad_scale =
          std::max(grad_scale, analytic_all[p].array().abs().maxCoeff());
  }
  const double floor =
      std::max(opt.floor, opt.rel_floor_scale * grad_scale);

  GradCheckResult res;
  std::vector<Matrix> work = params;
  for (size_t p = 0; p < params.size(); ++p) {
    const Matrix& analytic = analytic_all[p];
    for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
      for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
        double saved = work[p](i, j);
        work[p](i, j) = saved + opt.step;
        double up = eval_loss(work, build_loss);
        work[p](i, j) = saved - opt.step;
        double down = eval_loss(work, build_loss);
        work[p](i, j) = saved;
        double numeric = (up - down) / (2.0 * opt.step);
        if (opt.kink_tol > 0.0) {
          const double right = (up - base) / opt.step;
          const double left = (base - down) / opt.step;
          if (std::abs(right - left) >
              opt.kink_tol *
                  std::max({std::abs(right), std::abs(left), floor})) {
            ++res.kinks_skipped;
            continue;
          }
        }
        double a = analytic(i, j) + opt.inject_error;
        double rel = std::abs(a - numeric) /
                     std::max({std::abs(a), std::abs(numeric), floor});
        if (rel > res.max_rel_err) {
          res.max_rel_err = rel;
          res.worst_param = names[p];
          res.worst_row = static_cast<int>(i);
          res.worst_col = static_cast<int>(j);
          res.analytic = a;
          res.numeric = numeric;
        }
      }
    }
  }
  return res;
}

}  // namespace flare

#pragma once

#include "dlcm/common.hpp"

#include <functional>

namespace dlcm {

/// Objective: value and gradient at x.
using ObjectiveFn = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
  int max_iters = 500;
  int history = 10;
  double grad_tol = 1e-10;
  double step_tol = 1e-14;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  int iters = 0;
  bool converged = false;
};

/// Limited-memory quasi-Newton with Armijo backtracking line search.
LbfgsResult lbfgs_minimize(const ObjectiveFn& f, const Vector& x0,
                           const LbfgsOptions& opts = {});

/// Fills the residual vector and, when jac is non-null, the Jacobian
/// d r_i / d x_k at x.
using ResidualFn = std::function<void(const Vector& x, Vector& residuals, Matrix* jac)>;

struct LmOptions {
  int max_iters = 400;
  double lambda0 = 1e-3;
  double step_tol = 1e-15;
  double obj_tol = 0.0;  // stop early when 0.5*||r||^2 falls below
  Vector lower;          // optional box; trial points are projected into it
  Vector upper;
};

struct LmResult {
  Vector x;
  double objective = 0.0;  // 0.5 * ||r||^2
  int iters = 0;
  bool converged = false;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) for small dense least squares;
/// far better conditioned than generic quasi-Newton in flat power-law valleys.
LmResult lm_minimize(const ResidualFn& f, const Vector& x0, const LmOptions& opts = {});

}  // namespace dlcm

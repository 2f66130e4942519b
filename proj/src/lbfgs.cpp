#include "dlcm/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace dlcm {

LbfgsResult lbfgs_minimize(const ObjectiveFn& f, const Vector& x0, const LbfgsOptions& opts) {
  const Index n = x0.size();
  LbfgsResult res;
  res.x = x0;
  Vector g(n);
  res.value = f(res.x, g);

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    res.iters = iter;
    if (g.norm() <= opts.grad_tol * std::max(1.0, res.x.norm())) {
      res.converged = true;
      break;
    }

    // two-loop recursion
    Vector q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] =
          rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) {
      const Vector& s = s_hist.back();
      const Vector& y = y_hist.back();
      const double yy = y.dot(y);
      if (yy > 0) gamma = s.dot(y) / yy;
    }
    Vector z = gamma * q;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(z);
      z += (alpha[i] - beta) * s_hist[i];
    }
    Vector dir = -z;
    if (dir.dot(g) >= 0) dir = -g;  // safeguard: fall back to steepest descent

    // Armijo backtracking
    const double slope = dir.dot(g);
    double step = 1.0;
    Vector x_new(n), g_new(n);
    double f_new = res.value;
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok || step * dir.norm() <= opts.step_tol * std::max(1.0, res.x.norm())) {
      res.converged = ok;
      break;
    }

    Vector s = x_new - res.x;
    Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    res.x = std::move(x_new);
    g = g_new;
    res.value = f_new;
  }
  return res;
}

LmResult lm_minimize(const ResidualFn& f, const Vector& x0, const LmOptions& opts) {
  LmResult res;
  res.x = x0;
  const Index n = x0.size();

  auto project = [&](Vector& x) {
    if (opts.lower.size() == n) x = x.cwiseMax(opts.lower);
    if (opts.upper.size() == n) x = x.cwiseMin(opts.upper);
  };
  project(res.x);

  Vector r;
  Matrix jac;
  f(res.x, r, &jac);
  res.objective = 0.5 * r.squaredNorm();
  double lambda = opts.lambda0;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    res.iters = iter;
    if (res.objective <= opts.obj_tol) {
      res.converged = true;
      break;
    }
    const Matrix jtj = jac.transpose() * jac;
    const Vector jtr = jac.transpose() * r;
    if (jtr.norm() <= 1e-14 * std::max(1.0, res.x.norm())) {
      res.converged = true;
      break;
    }

    bool stepped = false;
    for (int attempt = 0; attempt < 40; ++attempt) {
      Matrix damped = jtj;
      for (Index i = 0; i < n; ++i) {
        damped(i, i) += lambda * std::max(jtj(i, i), 1e-12);
      }
      const Vector delta = damped.ldlt().solve(-jtr);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      Vector x_new = res.x + delta;
      project(x_new);
      Vector r_new;
      f(x_new, r_new, nullptr);
      const double obj_new = 0.5 * r_new.squaredNorm();
      if (std::isfinite(obj_new) && obj_new < res.objective) {
        const double step_size = delta.norm();
        res.x = x_new;
        res.objective = obj_new;
        lambda = std::max(lambda * 0.3, 1e-12);
        f(res.x, r, &jac);
        stepped = true;
        if (step_size <= opts.step_tol * std::max(1.0, res.x.norm())) {
          res.converged = true;
        }
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e14) break;
    }
    if (!stepped || res.converged) {
      if (!stepped) res.converged = true;  // damping exhausted: local minimum
      break;
    }
  }
  return res;
}

}  // namespace dlcm

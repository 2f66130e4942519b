#include "dlcm/scaling.hpp"

#include "dlcm/lbfgs.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace dlcm {

namespace {

struct Terms {
  double x1 = 0.0, x2 = 0.0, x3 = 0.0;  // power-law bases
  double t1 = 0.0, t2 = 0.0, t3 = 0.0;  // term values
  double pred = 0.0;
};

Terms eval_terms(const ScalingFit& fit, double n, double d, double r, double p, double offset) {
  Terms t;
  t.x1 = n * (1.0 - p) + fit.t_token;
  t.x2 = n * p + fit.t_concept;
  t.x3 = d + fit.t_data;
  t.t1 = fit.a_token * std::pow(t.x1, -fit.delta1);
  t.t2 = fit.a_concept * std::pow(r, fit.gamma) * std::pow(t.x2, -fit.delta2);
  t.t3 = fit.a_data * std::pow(t.x3, -fit.alpha_data);
  t.pred = fit.e0 + t.t1 + t.t2 + t.t3 + offset;
  return t;
}

}  // namespace

double ScalingFit::predict(double n, double d, double r, double p,
                           const std::string& config_id) const {
  double offset = 0.0;
  auto it = config_offsets.find(config_id);
  if (it != config_offsets.end()) offset = it->second;
  return eval_terms(*this, n, d, r, p, offset).pred;
}

std::string ScalingFit::to_json() const {
  nlohmann::json j;
  j["E0"] = e0;
  j["A_token"] = a_token;
  j["A_concept"] = a_concept;
  j["A_data"] = a_data;
  j["t_token"] = t_token;
  j["t_concept"] = t_concept;
  j["t_data"] = t_data;
  j["delta1"] = delta1;
  j["delta2"] = delta2;
  j["gamma"] = gamma;
  j["alpha_data"] = alpha_data;
  j["r_squared"] = r_squared;
  j["objective"] = objective;
  j["config_offsets"] = config_offsets;
  return j.dump(2);
}

ScalingFit ScalingFit::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ScalingFit fit;
  fit.e0 = j.at("E0").get<double>();
  fit.a_token = j.at("A_token").get<double>();
  fit.a_concept = j.at("A_concept").get<double>();
  fit.a_data = j.at("A_data").get<double>();
  fit.t_token = j.at("t_token").get<double>();
  fit.t_concept = j.at("t_concept").get<double>();
  fit.t_data = j.at("t_data").get<double>();
  fit.delta1 = j.at("delta1").get<double>();
  fit.delta2 = j.at("delta2").get<double>();
  fit.gamma = j.at("gamma").get<double>();
  fit.alpha_data = j.at("alpha_data").get<double>();
  fit.r_squared = j.value("r_squared", 0.0);
  fit.objective = j.value("objective", 0.0);
  if (j.contains("config_offsets")) {
    for (auto it = j["config_offsets"].begin(); it != j["config_offsets"].end(); ++it) {
      fit.config_offsets[it.key()] = it.value().get<double>();
    }
  }
  return fit;
}

ScalingFit fit_full_law(const std::vector<ScalingPoint>& points, const FitOptions& opts) {
  if (points.size() < 30) {
    throw ConfigError("fit_full_law: need at least 30 points, got " +
                      std::to_string(points.size()));
  }
  std::set<double> ns, rs, ps;
  std::vector<std::string> config_ids;
  for (const ScalingPoint& pt : points) {
    if (!(pt.n > 0) || !(pt.d > 0) || !std::isfinite(pt.loss) || !(pt.loss > 0)) {
      throw ConfigError("fit_full_law: invalid point (N, D, loss must be positive)");
    }
    if (!(pt.p > 0.0) || !(pt.p < 1.0)) {
      throw ConfigError("fit_full_law: P must lie in (0,1)");
    }
    ns.insert(pt.n);
    rs.insert(pt.r);
    ps.insert(pt.p);
    if (std::find(config_ids.begin(), config_ids.end(), pt.config_id) == config_ids.end()) {
      config_ids.push_back(pt.config_id);
    }
  }
  std::sort(config_ids.begin(), config_ids.end());  // order-independent gauge
  if (ns.size() < 3) throw ConfigError("fit_full_law: rank-deficient design on the N axis");
  if (rs.size() < 2) {
    throw ConfigError("fit_full_law: rank-deficient design on the R axis (gamma unidentifiable)");
  }
  if (ps.size() < 2) throw ConfigError("fit_full_law: rank-deficient design on the P axis");

  const int n_cfg = static_cast<int>(config_ids.size());
  const int n_free_off = n_cfg > 1 ? n_cfg - 1 : 0;  // mean-zero gauge
  const int dim = 11 + n_free_off;

  std::vector<int> cfg_of(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    cfg_of[i] = static_cast<int>(
        std::find(config_ids.begin(), config_ids.end(), points[i].config_id) - config_ids.begin());
  }

  double loss_min = 1e300, loss_mean_ln = 0.0, w_total = 0.0;
  double n1p_min = 1e300, np_min = 1e300, d_min = 1e300;
  for (const ScalingPoint& pt : points) {
    loss_min = std::min(loss_min, pt.loss);
    loss_mean_ln += pt.weight * std::log(pt.loss);
    w_total += pt.weight;
    n1p_min = std::min(n1p_min, pt.n * (1.0 - pt.p));
    np_min = std::min(np_min, pt.n * pt.p);
    d_min = std::min(d_min, pt.d);
  }
  loss_mean_ln /= w_total;

  auto unpack = [&](const Vector& u) {
    ScalingFit fit;
    fit.e0 = std::exp(u[0]);
    fit.a_token = std::exp(u[1]);
    fit.a_concept = std::exp(u[2]);
    fit.a_data = std::exp(u[3]);
    fit.t_token = std::exp(u[4]);
    fit.t_concept = std::exp(u[5]);
    fit.t_data = std::exp(u[6]);
    fit.delta1 = std::exp(u[7]);
    fit.delta2 = std::exp(u[8]);
    fit.alpha_data = std::exp(u[9]);
    fit.gamma = u[10];
    double sum = 0.0;
    for (int c = 0; c < n_free_off; ++c) {
      fit.config_offsets[config_ids[static_cast<std::size_t>(c)]] = u[11 + c];
      sum += u[11 + c];
    }
    if (n_cfg > 1) {
      fit.config_offsets[config_ids[static_cast<std::size_t>(n_cfg - 1)]] = -sum;
    } else {
      fit.config_offsets[config_ids[0]] = 0.0;
    }
    return fit;
  };

  auto objective = [&](const Vector& u, Vector& grad) -> double {
    const ScalingFit fit = unpack(u);
    grad = Vector::Zero(dim);
    double obj = 0.0;
    if (n_cfg > 1 && opts.offset_ridge > 0.0) {
      double off_last = 0.0;
      for (int c2 = 0; c2 < n_free_off; ++c2) off_last -= u[11 + c2];
      for (int c2 = 0; c2 < n_free_off; ++c2) {
        obj += 0.5 * opts.offset_ridge * u[11 + c2] * u[11 + c2];
        grad[11 + c2] += opts.offset_ridge * (u[11 + c2] - off_last);
      }
      obj += 0.5 * opts.offset_ridge * off_last * off_last;
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      const ScalingPoint& pt = points[i];
      const double off = fit.config_offsets.at(pt.config_id);
      const Terms tm = eval_terms(fit, pt.n, pt.d, pt.r, pt.p, off);
      if (!(tm.pred > 0) || !std::isfinite(tm.pred)) {
        return std::numeric_limits<double>::infinity();
      }
      const double r = std::log(tm.pred) - std::log(pt.loss);
      double drho;  // d rho / d r
      if (opts.huber && std::abs(r) > opts.huber_delta) {
        obj += pt.weight * opts.huber_delta * (std::abs(r) - 0.5 * opts.huber_delta);
        drho = pt.weight * opts.huber_delta * (r > 0 ? 1.0 : -1.0);
      } else {
        obj += 0.5 * pt.weight * r * r;
        drho = pt.weight * r;
      }
      const double dpred = drho / tm.pred;

      grad[0] += dpred * fit.e0;
      grad[1] += dpred * tm.t1;
      grad[2] += dpred * tm.t2;
      grad[3] += dpred * tm.t3;
      grad[4] += dpred * (-fit.delta1 * tm.t1 / tm.x1) * fit.t_token;
      grad[5] += dpred * (-fit.delta2 * tm.t2 / tm.x2) * fit.t_concept;
      grad[6] += dpred * (-fit.alpha_data * tm.t3 / tm.x3) * fit.t_data;
      grad[7] += dpred * (-tm.t1 * std::log(tm.x1)) * fit.delta1;
      grad[8] += dpred * (-tm.t2 * std::log(tm.x2)) * fit.delta2;
      grad[9] += dpred * (-tm.t3 * std::log(tm.x3)) * fit.alpha_data;
      grad[10] += dpred * tm.t2 * std::log(pt.r);
      const int c = cfg_of[i];
      if (n_cfg > 1) {
        if (c < n_free_off) {
          grad[11 + c] += dpred;
        } else {
          for (int k = 0; k < n_free_off; ++k) grad[11 + k] -= dpred;
        }
      }
    }
    return obj;
  };

  // Given exponents and shift constants, (E0, A's, offsets) enter linearly;
  // solving that weighted subproblem exactly makes every start land near its
  // basin (weights 1/loss^2 approximate the log-space objective).
  auto linear_solve_init = [&](double d1, double d2, double al, double gam, double t1, double t2,
                               double t3, Vector& u0) {
    const Index rows = static_cast<Index>(points.size());
    const Index cols = 4 + n_free_off;
    Matrix design = Matrix::Zero(rows, cols);
    Vector rhs(rows);
    for (Index i = 0; i < rows; ++i) {
      const ScalingPoint& pt = points[static_cast<std::size_t>(i)];
      const double s = std::sqrt(pt.weight) / pt.loss;
      design(i, 0) = s;
      design(i, 1) = s * std::pow(pt.n * (1.0 - pt.p) + t1, -d1);
      design(i, 2) = s * std::pow(pt.r, gam) * std::pow(pt.n * pt.p + t2, -d2);
      design(i, 3) = s * std::pow(pt.d + t3, -al);
      const int c = cfg_of[static_cast<std::size_t>(i)];
      if (n_cfg > 1) {
        if (c < n_free_off) {
          design(i, 4 + c) = s;
        } else {
          for (int k = 0; k < n_free_off; ++k) design(i, 4 + k) = -s;
        }
      }
      rhs[i] = s * pt.loss;
    }
    // ridge rows keep the offset columns from absorbing the E0/A structure
    Matrix full = design;
    Vector full_rhs = rhs;
    if (n_free_off > 0) {
      const double lam = std::max(opts.offset_ridge, 1.0);
      full.conservativeResize(rows + n_free_off, cols);
      full_rhs.conservativeResize(rows + n_free_off);
      full.bottomRows(n_free_off).setZero();
      for (int c = 0; c < n_free_off; ++c) {
        full(rows + c, 4 + c) = std::sqrt(lam);
        full_rhs[rows + c] = 0.0;
      }
    }
    const Vector beta = full.colPivHouseholderQr().solve(full_rhs);
    // non-positive amplitudes restart at a data-scaled guess: the log
    // parameterization cannot climb out of A ~ 0 on its own
    const double resid = std::max(std::exp(loss_mean_ln) - std::max(beta[0], 0.0), 1e-3);
    const double g1 = resid / 3.0 * std::pow(n1p_min + t1, d1);
    const double g2 = resid / 3.0 * std::pow(np_min + t2, d2);
    const double g3 = resid / 3.0 * std::pow(d_min + t3, al);
    u0[0] = std::log(std::max(beta[0], 0.5 * loss_min));
    u0[1] = std::log(beta[1] > 0.05 * g1 ? beta[1] : g1);
    u0[2] = std::log(beta[2] > 0.05 * g2 ? beta[2] : g2);
    u0[3] = std::log(beta[3] > 0.05 * g3 ? beta[3] : g3);
    u0[4] = std::log(t1);
    u0[5] = std::log(t2);
    u0[6] = std::log(t3);
    u0[7] = std::log(d1);
    u0[8] = std::log(d2);
    u0[9] = std::log(al);
    u0[10] = gam;
    for (int c = 0; c < n_free_off; ++c) u0[11 + c] = beta[4 + c];
  };

  // Candidate sweep: exponent grid plus random tuples, each with the linear
  // parameters projected out; the best few feed the damped Gauss-Newton runs.
  Rng rng(opts.seed);
  Vector grad_scratch(dim);
  std::vector<std::pair<double, Vector>> candidates;
  auto push_candidate = [&](double d1, double d2, double al, double gam, double t1, double t2,
                            double t3) {
    Vector u0 = Vector::Zero(dim);
    linear_solve_init(d1, d2, al, gam, t1, t2, t3, u0);
    const double value = objective(u0, grad_scratch);
    if (std::isfinite(value)) candidates.emplace_back(value, std::move(u0));
  };
  for (double d1 : {0.2, 0.35, 0.5}) {
    for (double d2 : {0.2, 0.35, 0.5}) {
      for (double al : {0.2, 0.35, 0.5}) {
        for (double gam : {-0.2, 0.0, 0.2}) {
          push_candidate(d1, d2, al, gam, std::max(1.0, 0.1 * n1p_min),
                         std::max(1.0, 0.1 * np_min), std::max(1.0, 0.1 * d_min));
        }
      }
    }
  }
  const int sweep = std::max(64, 24 * opts.multi_starts);
  for (int k = 0; k < sweep; ++k) {
    auto j = [&](double lo, double hi) { return rng.next_range(lo, hi); };
    push_candidate(0.3 * std::exp(j(-1.1, 0.9)), 0.3 * std::exp(j(-1.1, 0.9)),
                   0.3 * std::exp(j(-1.1, 0.9)), j(-0.5, 0.5),
                   std::max(1.0, 0.02 * n1p_min) * std::exp(j(-2.5, 2.5)),
                   std::max(1.0, 0.02 * np_min) * std::exp(j(-2.5, 2.5)),
                   std::max(1.0, 0.02 * d_min) * std::exp(j(-2.5, 2.5)));
  }
  if (candidates.empty()) throw NumericError("fit_full_law: no feasible starting point");
  std::sort(candidates.begin(), candidates.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Damped Gauss-Newton on the stacked residual vector (log residuals plus
  // ridge pseudo-residuals); the flat power-law valley defeats plain
  // quasi-Newton steps, LM handles it.
  const Index n_rows = static_cast<Index>(points.size()) + (n_cfg > 1 ? n_cfg : 0);
  auto residual_fn = [&](const Vector& u, Vector& r, Matrix* jac) {
    const ScalingFit fit = unpack(u);
    r.resize(n_rows);
    if (jac != nullptr) *jac = Matrix::Zero(n_rows, dim);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const ScalingPoint& pt = points[i];
      const Index row = static_cast<Index>(i);
      const double off = fit.config_offsets.at(pt.config_id);
      const Terms tm = eval_terms(fit, pt.n, pt.d, pt.r, pt.p, off);
      if (!(tm.pred > 0) || !std::isfinite(tm.pred)) {
        r[row] = 1e6;
        continue;
      }
      const double sw = std::sqrt(pt.weight);
      r[row] = sw * (std::log(tm.pred) - std::log(pt.loss));
      if (jac == nullptr) continue;
      const double dpred = sw / tm.pred;
      (*jac)(row, 0) = dpred * fit.e0;
      (*jac)(row, 1) = dpred * tm.t1;
      (*jac)(row, 2) = dpred * tm.t2;
      (*jac)(row, 3) = dpred * tm.t3;
      (*jac)(row, 4) = dpred * (-fit.delta1 * tm.t1 / tm.x1) * fit.t_token;
      (*jac)(row, 5) = dpred * (-fit.delta2 * tm.t2 / tm.x2) * fit.t_concept;
      (*jac)(row, 6) = dpred * (-fit.alpha_data * tm.t3 / tm.x3) * fit.t_data;
      (*jac)(row, 7) = dpred * (-tm.t1 * std::log(tm.x1)) * fit.delta1;
      (*jac)(row, 8) = dpred * (-tm.t2 * std::log(tm.x2)) * fit.delta2;
      (*jac)(row, 9) = dpred * (-tm.t3 * std::log(tm.x3)) * fit.alpha_data;
      (*jac)(row, 10) = dpred * tm.t2 * std::log(pt.r);
      const int c = cfg_of[i];
      if (n_cfg > 1) {
        if (c < n_free_off) {
          (*jac)(row, 11 + c) = dpred;
        } else {
          for (int k = 0; k < n_free_off; ++k) (*jac)(row, 11 + k) = -dpred;
        }
      }
    }
    if (n_cfg > 1) {
      const double sr = std::sqrt(opts.offset_ridge);
      for (int c = 0; c < n_cfg; ++c) {
        const Index row = static_cast<Index>(points.size()) + c;
        const double off = fit.config_offsets.at(config_ids[static_cast<std::size_t>(c)]);
        r[row] = sr * off;
        if (jac != nullptr) {
          if (c < n_free_off) {
            (*jac)(row, 11 + c) = sr;
          } else {
            for (int k = 0; k < n_free_off; ++k) (*jac)(row, 11 + k) = -sr;
          }
        }
      }
    }
  };

  LmOptions lm;
  lm.max_iters = opts.max_iters;
  {
    // bounds on the log-transformed parameters keep flat directions finite
    const double loss_max_ln = loss_mean_ln + 3.0;
    lm.lower = Vector::Constant(dim, -30.0);
    lm.upper = Vector::Constant(dim, 60.0);
    lm.lower[0] = std::log(loss_min) - 8.0;
    lm.upper[0] = loss_max_ln;
    lm.lower[4] = 0.0;
    lm.upper[4] = std::log(100.0 * n1p_min);
    lm.lower[5] = 0.0;
    lm.upper[5] = std::log(100.0 * np_min);
    lm.lower[6] = 0.0;
    lm.upper[6] = std::log(100.0 * d_min);
    for (int k = 7; k <= 9; ++k) {
      lm.lower[k] = std::log(0.01);
      lm.upper[k] = std::log(5.0);
    }
    lm.lower[10] = -3.0;
    lm.upper[10] = 3.0;
    for (int c = 0; c < n_free_off; ++c) {
      lm.lower[11 + c] = -5.0;
      lm.upper[11 + c] = 5.0;
    }
  }
  LmResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const int polish_count =
      std::min<int>(std::max(opts.multi_starts, 12), static_cast<int>(candidates.size()));
  const bool debug = std::getenv("DLCM_FIT_DEBUG") != nullptr;
  for (int start = 0; start < polish_count; ++start) {
    LmResult res =
        lm_minimize(residual_fn, candidates[static_cast<std::size_t>(start)].second, lm);
    if (debug) {
      const ScalingFit f = unpack(res.x);
      std::fprintf(stderr,
                   "[fit] start %d: init %.3e -> obj %.6e iters %d | d1=%.3f d2=%.3f al=%.3f "
                   "gam=%.3f e0=%.3f a1=%.1f t1=%.2e\n",
                   start, candidates[static_cast<std::size_t>(start)].first, res.objective,
                   res.iters, f.delta1, f.delta2, f.alpha_data, f.gamma, f.e0, f.a_token,
                   f.t_token);
    }
    if (res.objective < best.objective) best = res;
  }
  if (!std::isfinite(best.objective)) {
    throw NumericError("fit_full_law: optimization failed from every start");
  }

  // perturbation restarts around the incumbent pry it out of shallow basins
  for (double spread : {0.5, 0.2, 0.05}) {
    for (int k = 0; k < 6; ++k) {
      Vector u = best.x;
      for (Index i = 0; i < 11; ++i) u[i] += spread * rng.next_normal();
      const LmResult res = lm_minimize(residual_fn, u, lm);
      if (res.objective < best.objective) best = res;
    }
  }
  if (opts.huber) {
    // robust polish on the Huber objective
    LbfgsOptions lopts;
    lopts.max_iters = opts.max_iters;
    const LbfgsResult robust = lbfgs_minimize(objective, best.x, lopts);
    if (std::isfinite(robust.value)) {
      best.x = robust.x;
      best.objective = robust.value;
    }
  }

  ScalingFit fit = unpack(best.x);
  fit.objective = best.objective;

  // weighted R^2 in log space + residual report
  double ss_res = 0.0, ss_tot = 0.0;
  fit.residuals.reserve(points.size());
  for (const ScalingPoint& pt : points) {
    const double pred = fit.predict(pt.n, pt.d, pt.r, pt.p, pt.config_id);
    const double r = std::log(pred) - std::log(pt.loss);
    fit.residuals.push_back(r);
    ss_res += pt.weight * r * r;
    ss_tot += pt.weight * (std::log(pt.loss) - loss_mean_ln) * (std::log(pt.loss) - loss_mean_ln);
  }
  fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

std::vector<ScalingPoint> tail_weighted_sampling(const std::vector<ScalingPoint>& trajectory,
                                                 int max_points, double w) {
  if (trajectory.empty()) return {};
  std::vector<ScalingPoint> sorted = trajectory;
  std::sort(sorted.begin(), sorted.end(),
            [](const ScalingPoint& a, const ScalingPoint& b) { return a.d < b.d; });
  const double d_max = sorted.back().d;
  const double d_min = std::max(1.0, sorted.front().d);

  std::vector<ScalingPoint> out;
  if (static_cast<int>(sorted.size()) <= max_points) {
    out = sorted;
  } else {
    // log-spaced targets in D; nearest trajectory point per target, deduped
    std::set<std::size_t> chosen;
    for (int i = 0; i < max_points; ++i) {
      const double frac = max_points == 1 ? 1.0 : static_cast<double>(i) / (max_points - 1);
      const double target = d_min * std::pow(d_max / d_min, frac);
      std::size_t best = 0;
      double best_gap = 1e300;
      for (std::size_t k = 0; k < sorted.size(); ++k) {
        const double gap = std::abs(std::log(sorted[k].d) - std::log(target));
        if (gap < best_gap) {
          best_gap = gap;
          best = k;
        }
      }
      chosen.insert(best);
    }
    chosen.insert(sorted.size() - 1);
    for (std::size_t idx : chosen) out.push_back(sorted[idx]);
  }
  for (ScalingPoint& pt : out) {
    pt.weight = w == 0.0 ? 1.0 : std::pow(pt.d / d_max, w);
  }
  if (!out.empty()) out.back().weight = 1.0;  // last point retained at max weight
  return out;
}

double DecayFit::predict(double l_stable, double r, double n) const {
  return k * std::pow(l_stable, a) * std::pow(r, b) * std::pow(n, c);
}

std::string DecayFit::to_json() const {
  nlohmann::json j;
  j["k"] = k;
  j["a"] = a;
  j["b"] = b;
  j["c"] = c;
  j["r_squared"] = r_squared;
  j["used_runs"] = used_runs;
  j["dropped_runs"] = dropped_runs;
  return j.dump(2);
}

DecayFit fit_decay_law(const std::vector<DecayRun>& runs) {
  std::vector<DecayRun> valid;
  int dropped = 0;
  for (const DecayRun& r : runs) {
    if (r.delta_decay > 0 && r.l_stable > 0 && r.r > 0 && r.n > 0) {
      valid.push_back(r);
    } else {
      ++dropped;
    }
  }
  if (valid.size() < 5) {
    throw ConfigError("fit_decay_law: need at least 5 usable runs, got " +
                      std::to_string(valid.size()));
  }

  const Index m = static_cast<Index>(valid.size());
  Matrix design(m, 4);
  Vector y(m);
  for (Index i = 0; i < m; ++i) {
    const DecayRun& r = valid[static_cast<std::size_t>(i)];
    design(i, 0) = 1.0;
    design(i, 1) = std::log(r.l_stable);
    design(i, 2) = std::log(r.r);
    design(i, 3) = std::log(r.n);
    y[i] = std::log(r.delta_decay);
  }
  const Vector beta = design.colPivHouseholderQr().solve(y);

  DecayFit fit;
  fit.k = std::exp(beta[0]);
  fit.a = beta[1];
  fit.b = beta[2];
  fit.c = beta[3];
  fit.used_runs = static_cast<int>(valid.size());
  fit.dropped_runs = dropped;

  const Vector resid = y - design * beta;
  const double mean_y = y.mean();
  const double ss_tot = (y.array() - mean_y).square().sum();
  fit.r_squared = ss_tot > 0 ? 1.0 - resid.squaredNorm() / ss_tot : 1.0;
  return fit;
}

FlopsEstimate flops_estimate(const ArchConfig& arch, double d_tokens, double r) {
  if (r < 1.0) throw ConfigError("flops_estimate: R must be >= 1");
  if (d_tokens < 0) throw ConfigError("flops_estimate: negative token budget");
  FlopsEstimate est;
  est.token_weight = 6.0 * d_tokens * arch.n_token_side;
  est.concept_weight = 6.0 * (d_tokens / r) * arch.n_backbone;
  if (arch.window > 0) {
    est.token_attn = d_tokens * arch.token_layers * 12.0 * static_cast<double>(arch.window) *
                     arch.d_token;
    est.concept_attn = d_tokens * arch.backbone_layers * 12.0 *
                       (static_cast<double>(arch.window) / r) * arch.d_concept;
  }
  est.total = est.token_weight + est.concept_weight + est.token_attn + est.concept_attn;
  est.per_token = d_tokens > 0 ? est.total / d_tokens : 0.0;
  return est;
}

OptimalConfigResult optimal_config(double n_budget, double d_tokens,
                                   const std::vector<double>& p_grid,
                                   const std::vector<double>& r_grid, const ScalingFit& fit,
                                   const ArchConfig& arch_template) {
  if (p_grid.empty() || r_grid.empty()) throw ConfigError("optimal_config: empty grid");
  const double flops_budget = 6.0 * n_budget * d_tokens;  // dense-equivalent reference

  OptimalConfigResult out;
  for (double p : p_grid) {
    for (double r : r_grid) {
      ArchConfig arch = arch_template;
      arch.n_token_side = n_budget * (1.0 - p);
      arch.n_backbone = n_budget * p;
      const FlopsEstimate per = flops_estimate(arch, 1.0, r);
      ConfigCell cell;
      cell.p = p;
      cell.r = r;
      cell.d_at_equal_flops = per.per_token > 0 ? flops_budget / per.per_token : 0.0;
      cell.predicted_loss = fit.predict(n_budget, cell.d_at_equal_flops, r, p);
      out.table.push_back(cell);
    }
  }
  std::sort(out.table.begin(), out.table.end(),
            [](const ConfigCell& a, const ConfigCell& b) {
              return a.predicted_loss < b.predicted_loss;
            });
  out.best = out.table.front();
  out.annotation =
      "reference operating point from the large-scale study: P=60%, R=4";
  return out;
}

double compute_multiplier(const ScalingFit& fit, const ArchConfig& dlcm_arch, double dlcm_p,
                          double dlcm_r, double dlcm_d, const ArchConfig& baseline_arch) {
  const double target =
      fit.predict(dlcm_arch.total_params(), dlcm_d, dlcm_r, dlcm_p);

  const double n_base = baseline_arch.total_params();
  const double p_base = baseline_arch.concept_fraction() > 0 ? baseline_arch.concept_fraction()
                                                             : 1e-9;
  auto base_loss = [&](double d) { return fit.predict(n_base, d, 1.0, p_base); };

  double lo = 1.0, hi = 1e18;
  if (base_loss(lo) < target || base_loss(hi) > target) {
    throw NumericError("compute_multiplier: no crossing for the baseline in range");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);  // bisect in log space
    if (base_loss(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double d_base = std::sqrt(lo * hi);
  const double flops_base = flops_estimate(baseline_arch, d_base, 1.0).total;
  const double flops_dlcm = flops_estimate(dlcm_arch, dlcm_d, dlcm_r).total;
  if (flops_dlcm <= 0) throw NumericError("compute_multiplier: degenerate FLOPs");
  return flops_base / flops_dlcm;
}

std::vector<ScalingPoint> load_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("scaling: cannot open " + path);
  std::vector<ScalingPoint> points;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.find("run_id") != std::string::npos) {
      first = false;
      continue;
    }
    first = false;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 6) throw IoError("scaling: bad CSV row: " + line);
    ScalingPoint pt;
    pt.config_id = fields[0];
    pt.n = std::stod(fields[1]);
    pt.p = std::stod(fields[2]);
    pt.r = std::stod(fields[3]);
    pt.d = std::stod(fields[4]);
    pt.loss = std::stod(fields[5]);
    if (fields.size() > 6) pt.phase = fields[6] == "decay" ? TrainPhase::Decay : TrainPhase::Stable;
    if (fields.size() > 7) pt.weight = std::stod(fields[7]);
    points.push_back(pt);
  }
  return points;
}

std::vector<ScalingPoint> load_points_jsonl(const std::string& path, double n_params, double r,
                                            double p, const std::string& run_id) {
  std::ifstream in(path);
  if (!in) throw IoError("scaling: cannot open " + path);
  std::vector<ScalingPoint> points;
  std::string line;
  long max_tokens = 0;
  std::vector<std::pair<long, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    const long tokens = j.at("tokens").get<long>();
    rows.emplace_back(tokens, j.at("loss_ce").get<double>());
    max_tokens = std::max(max_tokens, tokens);
  }
  for (const auto& [tokens, loss] : rows) {
    ScalingPoint pt;
    pt.config_id = run_id;
    pt.n = n_params;
    pt.r = r;
    pt.p = p;
    pt.d = static_cast<double>(tokens);
    pt.loss = loss;
    pt.phase = tokens >= static_cast<long>(0.9 * static_cast<double>(max_tokens))
                   ? TrainPhase::Decay
                   : TrainPhase::Stable;
    points.push_back(pt);
  }
  return points;
}

}  // namespace dlcm

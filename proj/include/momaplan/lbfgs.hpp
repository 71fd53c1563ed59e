#pragma once

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>

namespace momaplan {

/// Objective returning f(x) and writing the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsConfig {
  int memory = 8;
  int max_iters = 200;
  double grad_tol = 1e-8;       // on the infinity norm of the gradient
  double rel_tol = 1e-12;       // relative objective decrease per iteration
  int max_line_search = 40;
  double armijo = 1e-4;
  double wolfe = 0.9;
};

enum class LbfgsStatus { kConverged, kMaxIters, kLineSearch, kDiverged, kStopped };

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::kMaxIters;
};

/// Limited-memory BFGS with a bracketing strong-Wolfe line search. `stop` is
/// polled between iterations. The best point seen is returned.
inline LbfgsResult lbfgs_minimize(const Objective& f, Eigen::VectorXd x, const LbfgsConfig& cfg,
                                  const std::function<bool()>& stop = {}) {
  LbfgsResult res;
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n), g_new(n), x_new(n);
  double fx = f(x, g);
  ++res.evaluations;
  res.x = x;
  res.f = fx;
  if (!std::isfinite(fx) || !g.allFinite()) {
    res.status = LbfgsStatus::kDiverged;
    return res;
  }
  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  for (int it = 0; it < cfg.max_iters; ++it) {
    if (stop && stop()) {
      res.status = LbfgsStatus::kStopped;
      return res;
    }
    if (g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
      res.status = LbfgsStatus::kConverged;
      return res;
    }
    // two-loop recursion
    Eigen::VectorXd d = -g;
    std::vector<double> alpha(S.size());
    for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(d);
      d -= alpha[i] * Y[i];
    }
    if (!S.empty()) d *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * Y[i].dot(d);
      d += (alpha[i] - beta) * S[i];
    }
    double dg = d.dot(g);
    if (!(dg < 0)) {
      d = -g;
      dg = -g.squaredNorm();
      S.clear();
      Y.clear();
      rho.clear();
    }
    double step = S.empty() ? std::min(1.0, 1.0 / std::max(1e-12, g.lpNorm<Eigen::Infinity>())) : 1.0;

    // strong Wolfe: expand until bracketed, then bisect-style zoom
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double f_lo = fx;
    double f_new = fx;
    bool accepted = false;
    for (int ls = 0; ls < cfg.max_line_search; ++ls) {
      x_new = x + step * d;
      f_new = f(x_new, g_new);
      ++res.evaluations;
      if (!std::isfinite(f_new) || f_new > fx + cfg.armijo * step * dg || (ls > 0 && f_new >= f_lo && hi < 1e300)) {
        hi = step;
      } else {
        const double dg_new = g_new.dot(d);
        if (std::abs(dg_new) <= -cfg.wolfe * dg) {
          accepted = true;
          break;
        }
        if (dg_new > 0) {
          hi = step;
        } else {
          lo = step;
          f_lo = f_new;
        }
      }
      step = std::isinf(hi) ? 2.0 * step : 0.5 * (lo + hi);
    }
    if (!accepted) {
      // accept any sufficient decrease found, otherwise stop
      if (std::isfinite(f_new) && f_new < fx + cfg.armijo * step * dg && g_new.allFinite()) {
        accepted = true;
      } else if (lo > 0) {
        x_new = x + lo * d;
        f_new = f(x_new, g_new);
        ++res.evaluations;
        accepted = std::isfinite(f_new) && f_new < fx;
      }
    }
    if (!accepted) {
      res.status = LbfgsStatus::kLineSearch;
      res.iterations = it;
      return res;
    }
    const Eigen::VectorXd s = x_new - x, y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-16 * s.norm() * y.norm()) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > cfg.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    const double decrease = fx - f_new;
    x = x_new;
    g = g_new;
    fx = f_new;
    res.iterations = it + 1;
    if (fx < res.f) {
      res.f = fx;
      res.x = x;
    }
    if (decrease <= cfg.rel_tol * std::max(1.0, std::abs(fx))) {
      res.status = LbfgsStatus::kConverged;
      return res;
    }
  }
  res.status = LbfgsStatus::kMaxIters;
  return res;
}

}  // namespace momaplan

#include "bec/inner.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>

#include "bec/error.hpp"

namespace bec {

Eigen::VectorXd inner_objective_gradient(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  return gradient_y(prob.f, {x, w}) + (w - y) / prob.gamma;
}

Eigen::MatrixXd lower_constraint_jacobian_y(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                            const Eigen::VectorXd& w) {
  Eigen::MatrixXd J(prob.p(), prob.m);
  for (int i = 0; i < prob.p(); ++i) J.row(i) = gradient_y(prob.g[i], {x, w}).transpose();
  return J;
}

Polyhedron inner_multiplier_polyhedron(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& y, const Eigen::VectorXd& w, double active_tol) {
  const ActiveSet act = active_set(prob.g, {x, w}, active_tol);
  const Eigen::VectorXd r = inner_objective_gradient(prob, x, y, w);
  const Eigen::MatrixXd J = lower_constraint_jacobian_y(prob, x, w);
  Polyhedron P(prob.p(), true);
  for (int j = 0; j < prob.m; ++j) P.add_eq(J.col(j).transpose(), -r[j]);
  for (int i = 0; i < prob.p(); ++i)
    if (!act.contains(i)) P.fix_zero(i);
  return P;
}

namespace {

class InnerProblem {
 public:
  InnerProblem(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y)
      : prob_(prob), x_(x), y_(y) {}

  double nu(const Eigen::VectorXd& w) const { return eval(prob_.f, {x_, w}) + (w - y_).squaredNorm() / (2 * prob_.gamma); }
  Eigen::VectorXd grad_nu(const Eigen::VectorXd& w) const { return inner_objective_gradient(prob_, x_, y_, w); }
  Eigen::MatrixXd hess_nu(const Eigen::VectorXd& w) const {
    return hessian_yy(prob_.f, {x_, w}) + Eigen::MatrixXd::Identity(prob_.m, prob_.m) / prob_.gamma;
  }
  Eigen::VectorXd g(const Eigen::VectorXd& w) const {
    Eigen::VectorXd v(prob_.p());
    for (int i = 0; i < prob_.p(); ++i) v[i] = eval(prob_.g[i], {x_, w});
    return v;
  }
  Eigen::MatrixXd jac(const Eigen::VectorXd& w) const { return lower_constraint_jacobian_y(prob_, x_, w); }
  Eigen::MatrixXd hess_g(int i, const Eigen::VectorXd& w) const { return hessian_yy(prob_.g[i], {x_, w}); }
  int m() const { return prob_.m; }
  int p() const { return prob_.p(); }

  // Augmented Lagrangian value; +inf outside the domain of the data.
  double al(const Eigen::VectorXd& w, const Eigen::VectorXd& lam, double rho) const {
    try {
      const Eigen::VectorXd gv = g(w);
      double s = nu(w);
      for (int i = 0; i < p(); ++i) {
        const double t = std::max(0.0, lam[i] + rho * gv[i]);
        s += (t * t - lam[i] * lam[i]) / (2 * rho);
      }
      return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
    } catch (const DomainError&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  void al_derivatives(const Eigen::VectorXd& w, const Eigen::VectorXd& lam, double rho, Eigen::VectorXd& grad,
                      Eigen::MatrixXd& hess) const {
    const Eigen::VectorXd gv = g(w);
    const Eigen::MatrixXd J = jac(w);
    grad = grad_nu(w);
    hess = hess_nu(w);
    for (int i = 0; i < p(); ++i) {
      const double t = lam[i] + rho * gv[i];
      if (t <= 0) continue;
      grad += t * J.row(i).transpose();
      hess += t * hess_g(i, w) + rho * J.row(i).transpose() * J.row(i);
    }
  }

  // Max of stationarity, complementarity and feasibility violations.
  double kkt(const Eigen::VectorXd& w, const Eigen::VectorXd& lam) const {
    const Eigen::VectorXd gv = g(w);
    double r = (grad_nu(w) + jac(w).transpose() * lam).cwiseAbs().maxCoeff();
    for (int i = 0; i < p(); ++i) r = std::max({r, std::abs(lam[i] * gv[i]), gv[i], -lam[i]});
    return r;
  }

 private:
  const BilevelProblem& prob_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& y_;
};

// Approximate minimizer of the AL function by damped Newton with an Armijo
// gradient fallback.
int minimize_al(const InnerProblem& ip, Eigen::VectorXd& w, const Eigen::VectorXd& lam, double rho, int max_iter,
                double gtol) {
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  int it = 0;
  for (; it < max_iter; ++it) {
    ip.al_derivatives(w, lam, rho, grad, hess);
    const double gnorm = grad.cwiseAbs().maxCoeff();
    if (gnorm <= gtol) break;
    Eigen::VectorXd d;
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    bool newton = llt.info() == Eigen::Success;
    if (newton) {
      d = llt.solve(-grad);
      if (!d.allFinite() || grad.dot(d) >= 0) newton = false;
    }
    if (!newton) d = -grad;
    const double f0 = ip.al(w, lam, rho);
    const double slope = grad.dot(d);
    double step = 1.0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
      Eigen::VectorXd trial = w + step * d;
      const double f1 = ip.al(trial, lam, rho);
      if (f1 <= f0 + 1e-4 * step * slope || (newton && k == 0 && std::abs(f1 - f0) <= 1e-15 * std::max(1.0, std::abs(f0)))) {
        w = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Line search stalled at rounding level: take the full Newton step if it
      // does not increase the function beyond rounding.
      if (newton && ip.al(w + d, lam, rho) <= ip.al(w, lam, rho) + 1e-14 * std::max(1.0, std::abs(f0))) w += d;
      break;
    }
  }
  return it;
}

// Newton on the KKT system restricted to `act`, treated as equalities.
bool polish(const InnerProblem& ip, const std::vector<int>& act, Eigen::VectorXd& w, Eigen::VectorXd& lam) {
  const int m = ip.m();
  const int a = static_cast<int>(act.size());
  Eigen::VectorXd wk = w;
  Eigen::VectorXd lk = lam;
  for (int it = 0; it < 30; ++it) {
    Eigen::VectorXd gv, rhs(m + a);
    Eigen::MatrixXd J, K = Eigen::MatrixXd::Zero(m + a, m + a);
    try {
      gv = ip.g(wk);
      J = ip.jac(wk);
      Eigen::MatrixXd H = ip.hess_nu(wk);
      Eigen::VectorXd r = ip.grad_nu(wk);
      for (int k = 0; k < a; ++k) {
        const int i = act[k];
        H += lk[i] * ip.hess_g(i, wk);
        r += lk[i] * J.row(i).transpose();
        K.block(m + k, 0, 1, m) = J.row(i);
        K.block(0, m + k, m, 1) = J.row(i).transpose();
        rhs[m + k] = -gv[i];
      }
      K.topLeftCorner(m, m) = H;
      rhs.head(m) = -r;
    } catch (const DomainError&) {
      return false;
    }
    if (rhs.cwiseAbs().maxCoeff() <= 1e-15) break;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) return false;
    Eigen::VectorXd step = lu.solve(rhs);
    if (!step.allFinite()) return false;
    wk += step.head(m);
    for (int k = 0; k < a; ++k) lk[act[k]] += step[m + k];
    if (step.cwiseAbs().maxCoeff() <= 1e-15 * std::max(1.0, wk.cwiseAbs().maxCoeff())) break;
  }
  for (int k = 0; k < a; ++k)
    if (lk[act[k]] < 0) return false;
  try {
    if ((ip.g(wk).array() > 1e-13).any()) return false;
    if (!(ip.kkt(wk, lk) <= ip.kkt(w, lam))) return false;
  } catch (const DomainError&) {
    return false;
  }
  w = wk;
  lam = lk;
  return true;
}

struct RawSolve {
  Eigen::VectorXd w;
  Eigen::VectorXd lambda;
  int iterations = 0;
};

RawSolve augmented_lagrangian(const InnerProblem& ip, Eigen::VectorXd w, const InnerOptions& opts) {
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(ip.p());
  double rho = 10.0;
  int total = 0;
  for (int outer = 0; outer < opts.max_outer; ++outer) {
    const double gtol = std::max(0.1 * opts.kkt_tol, 1e-14);
    total += minimize_al(ip, w, lam, rho, opts.max_inner, gtol);
    const Eigen::VectorXd gv = ip.g(w);
    for (int i = 0; i < ip.p(); ++i) lam[i] = std::max(0.0, lam[i] + rho * gv[i]);
    const double feas = std::max(0.0, gv.maxCoeff());
    if (feas <= opts.feas_tol && ip.kkt(w, lam) <= opts.kkt_tol) break;
    // Polishing can already close the gap once the active set has settled.
    if (feas <= 1e-6) {
      std::vector<int> act;
      for (int i = 0; i < ip.p(); ++i)
        if (lam[i] > 0) act.push_back(i);
      Eigen::VectorXd wp = w, lp = lam;
      if (polish(ip, act, wp, lp) && ip.kkt(wp, lp) <= opts.kkt_tol) {
        w = wp;
        lam = lp;
        break;
      }
    }
    rho = std::min(rho * 10.0, 1e8);
  }
  return {w, lam, total};
}

// Gauss-Newton on the violated constraints; used when the AL iterates end
// slightly infeasible, typically because the multipliers diverge.
void restore_feasibility(const InnerProblem& ip, Eigen::VectorXd& w, double target) {
  for (int it = 0; it < 60; ++it) {
    const Eigen::VectorXd gv = ip.g(w);
    if (gv.maxCoeff() <= target) return;
    std::vector<int> viol;
    for (int i = 0; i < ip.p(); ++i)
      if (gv[i] > 0) viol.push_back(i);
    const Eigen::MatrixXd J = ip.jac(w);
    Eigen::MatrixXd JV(viol.size(), ip.m());
    Eigen::VectorXd gV(viol.size());
    for (std::size_t k = 0; k < viol.size(); ++k) {
      JV.row(k) = J.row(viol[k]);
      gV[k] = gv[viol[k]];
    }
    Eigen::VectorXd step = JV.completeOrthogonalDecomposition().solve(-gV);
    if (!step.allFinite() || step.norm() == 0) return;
    w += step;
  }
}

}  // namespace

InnerSolution solve_inner(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const InnerOptions& opts) {
  if (x.size() != prob.n || y.size() != prob.m)
    throw ValidationError(fmt::format("point has dimensions ({}, {}), problem expects ({}, {})", x.size(), y.size(),
                                      prob.n, prob.m));
  if (prob.gamma * prob.rho_f >= 1.0)
    throw RegimeError(fmt::format("inner problem is not strongly convex: gamma*rho_f = {} >= 1", prob.gamma * prob.rho_f));

  const InnerProblem ip(prob, x, y);
  RawSolve raw = augmented_lagrangian(ip, y, opts);
  Eigen::VectorXd w = raw.w;
  Eigen::VectorXd lam = raw.lambda;

  if (ip.g(w).maxCoeff() > opts.feas_tol) restore_feasibility(ip, w, opts.feas_tol);
  Eigen::VectorXd gv = ip.g(w);
  const double feas = std::max(0.0, gv.maxCoeff());
  if (feas > tol::active)
    throw InfeasibleLowerLevelError(
        fmt::format("lower-level feasibility stalled at {:.3g} (no feasible w near y?)", feas));

  {
    std::vector<int> act;
    for (int i = 0; i < ip.p(); ++i)
      if (lam[i] > 0 || gv[i] >= -tol::active) act.push_back(i);
    Eigen::VectorXd wp = w, lp = lam;
    for (int i = 0; i < ip.p(); ++i)
      if (std::find(act.begin(), act.end(), i) == act.end()) lp[i] = 0;
    if (polish(ip, act, wp, lp)) {
      w = wp;
      lam = lp;
    }
  }

  if (opts.cross_check) {
    InnerOptions second = opts;
    second.cross_check = false;
    Eigen::VectorXd start = y - prob.gamma * gradient_y(prob.f, {x, y});
    if (start.allFinite() && (start - y).norm() > 0) {
      RawSolve other = augmented_lagrangian(ip, start, second);
      if ((other.w - w).cwiseAbs().maxCoeff() > tol::inner_uniqueness) {
        // The second start may simply have converged less far; compare at
        // equal quality before declaring a failure.
        if (ip.kkt(other.w, other.lambda) <= tol::certificate)
          throw NumericError(fmt::format("inner solutions from two starts disagree by {:.3g}",
                                         (other.w - w).cwiseAbs().maxCoeff()));
      }
      raw.iterations += other.iterations;
    }
  }

  InnerSolution s;
  s.w = w;
  gv = ip.g(w);
  s.feasibility = std::max(0.0, gv.maxCoeff());
  s.active = active_set(prob.g, {x, w}, tol::active);
  for (int i = 0; i < ip.p(); ++i)
    if (!s.active.contains(i)) lam[i] = 0.0;

  // Least-squares multipliers on the active set.
  if (!s.active.indices.empty()) {
    const Eigen::MatrixXd J = ip.jac(w);
    const int a = static_cast<int>(s.active.indices.size());
    Eigen::MatrixXd JA(ip.m(), a);
    for (int k = 0; k < a; ++k) JA.col(k) = J.row(s.active.indices[k]).transpose();
    Eigen::VectorXd ls = JA.colPivHouseholderQr().solve(-ip.grad_nu(w));
    if (ls.allFinite() && (ls.array() >= 0).all()) {
      Eigen::VectorXd cand = Eigen::VectorXd::Zero(ip.p());
      for (int k = 0; k < a; ++k) cand[s.active.indices[k]] = ls[k];
      if (ip.kkt(w, cand) <= ip.kkt(w, lam)) lam = cand;
    }
  }

  s.kkt_residual = ip.kkt(w, lam);
  if (s.kkt_residual > tol::certificate) {
    const LPOutcome lp = lp_feasible(inner_multiplier_polyhedron(prob, x, y, w));
    if (lp.status != LPStatus::optimal) {
      s.multiplier_set_empty = true;
      spdlog::debug("inner: multiplier set empty at w (kkt residual {:.3g})", s.kkt_residual);
    } else if (ip.kkt(w, lp.witness) <= s.kkt_residual) {
      lam = lp.witness;
      s.kkt_residual = ip.kkt(w, lam);
    }
    // Multipliers that exist only with complementarity above tolerance (the
    // constraint gradients nearly vanish) are treated as absent.
    if (s.kkt_residual > tol::certificate) s.multiplier_set_empty = true;
  }
  s.lambda = lam;
  s.value = ip.nu(w);
  s.iterations = raw.iterations;
  return s;
}

}  // namespace bec

#include "bec/envelope.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "bec/error.hpp"
#include "bec/lpcore.hpp"

namespace bec {

Eigen::VectorXd Direction::stacked() const {
  Eigen::VectorXd d(u.size() + v.size());
  d << u, v;
  return d;
}

bool Direction::is_zero() const { return u.isZero(0.0) && v.isZero(0.0); }

Direction make_direction(const BilevelProblem& prob, const Eigen::VectorXd& stacked) {
  if (stacked.size() != prob.n + prob.m) throw ValidationError("direction must have length n+m");
  return {stacked.head(prob.n), stacked.tail(prob.m)};
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::weakly_convex: return "weakly-convex";
    case Regime::dini: return "dini";
    case Regime::rcr: return "rcr";
  }
  return "?";
}

const char* to_string(EstimateKind k) {
  switch (k) {
    case EstimateKind::exact_formula: return "exact-formula";
    case EstimateKind::bounds: return "bounds";
    case EstimateKind::finite_difference: return "finite-difference";
  }
  return "?";
}

const char* to_string(EstimateRegime r) {
  switch (r) {
    case EstimateRegime::weakly_convex: return "weakly-convex";
    case EstimateRegime::dini: return "dini";
    case EstimateRegime::rcr: return "rcr";
    case EstimateRegime::oracle: return "oracle";
  }
  return "?";
}

const char* to_string(SubdiffSource s) {
  switch (s) {
    case SubdiffSource::guignard: return "guignard";
    case SubdiffSource::union_upper: return "union-upper";
    case SubdiffSource::rcr_upper: return "rcr-upper";
  }
  return "?";
}

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();
constexpr double direction_row_tol = 1e-9;
constexpr double critical_box = 1e3;

void check_point(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != prob.n || y.size() != prob.m) throw ValidationError("point must have dimensions (n, m)");
}

void check_direction(const BilevelProblem& prob, const Direction& d) {
  if (d.u.size() != prob.n || d.v.size() != prob.m) throw ValidationError("direction must have dimensions (n, m)");
  if (!d.stacked().allFinite()) throw ValidationError("direction must be finite");
}

// Data of the inner problem at its solution w.
struct Local {
  InnerSolution sol;
  Eigen::VectorXd y_term;   // (y - w) / gamma
  Eigen::VectorXd grad_f;   // grad f(x, w), length n+m
  Eigen::VectorXd r;        // grad_w f(x, w) + (w - y) / gamma
  Eigen::MatrixXd J;        // grad g(x, w), p x (n+m)
  Polyhedron Lambda;

  Local(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    check_point(prob, x, y);
    sol = solve_inner(prob, x, y);
    y_term = (y - sol.w) / prob.gamma;
    grad_f = gradient(prob.f, {x, sol.w});
    r = inner_objective_gradient(prob, x, y, sol.w);
    J = constraint_jacobian(prob.g, {x, sol.w});
    Lambda = inner_multiplier_polyhedron(prob, x, y, sol.w);
  }

  void require_multipliers() const {
    if (sol.multiplier_set_empty || lp_feasible(Lambda).status != LPStatus::optimal)
      throw EmptyMultiplierSetError("Lambda(x,y,w) is empty at the proximal point");
  }

  Eigen::VectorXd x_coeffs(const Eigen::VectorXd& u) const { return J.leftCols(u.size()) * u; }

  Eigen::VectorXd map(const Eigen::VectorXd& lambda, int n) const {
    Eigen::VectorXd p(grad_f.size());
    p << grad_f.head(n) + J.leftCols(n).transpose() * lambda, y_term;
    return p;
  }

  // Lambda(x,y,w;u,d): adds lambda^T grad g(x,w)(u,d) = 0 over the active rows.
  Polyhedron directional(const Eigen::VectorXd& ud) const {
    Polyhedron P = Lambda;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(J.rows());
    for (int i : sol.active.indices) {
      const double c = J.row(i).dot(ud);
      if (std::abs(c) > direction_row_tol) row[i] = c;
    }
    if (!row.isZero(0.0)) P.add_eq(row, 0.0);
    return P;
  }

  bool tangent(const Eigen::VectorXd& ud) const {
    for (int i : sol.active.indices)
      if (J.row(i).dot(ud) > direction_row_tol) return false;
    return true;
  }
};

bool joint_flags(const BilevelProblem& prob) {
  return prob.f_convexity == FConvexity::jointly_weakly_convex && prob.g_convexity == GConvexity::jointly_quasiconvex;
}

CQReport note_report(CQCheck check, const std::string& detail) {
  CQReport r;
  r.check = check;
  r.detail = detail;
  return r;
}

void require_guignard(const BilevelProblem& prob, const Eigen::VectorXd& x, const Local& L, const Assumptions& a,
                      std::vector<CQReport>& pre) {
  if (!joint_flags(prob))
    throw RegimeError("weakly-convex regime needs f jointly weakly convex and g jointly quasiconvex");
  std::string why;
  if (a.guignard) {
    pre.push_back(note_report(CQCheck::mfcq, "Guignard CQ asserted"));
  } else if (mscq_sufficient(prob, x, L.sol.w, &why)) {
    pre.push_back(note_report(CQCheck::mfcq, "Guignard CQ via " + why));
  } else {
    throw RegimeError("Guignard CQ at (x,w) is not verified; assert it to use this regime");
  }
}

// MFCQ of g(x,.) at w, else the FOSCMS variant in direction u.
bool dini_hypothesis(const BilevelProblem& prob, const Eigen::VectorXd& x, const Local& L, const Eigen::VectorXd& u,
                     std::vector<CQReport>& pre) {
  CQReport mf = check_mfcq(prob, x, L.sol.w);
  pre.push_back(mf);
  if (mf.verdict == Verdict::holds) return true;
  CQReport fo = check_foscms_direction(prob, x, L.sol.w, u);
  pre.push_back(fo);
  return fo.verdict == Verdict::holds;
}

struct Range {
  double lo = 0.0, hi = 0.0;
  Eigen::VectorXd arg_lo, arg_hi;
};

Range multiplier_range(const Polyhedron& P, const Eigen::VectorXd& c, bool need_min) {
  Range out;
  LPOutcome mx = lp_optimize(c, P, Sense::maximize);
  if (mx.status == LPStatus::infeasible) throw EmptyMultiplierSetError("multiplier polyhedron is empty");
  out.hi = mx.status == LPStatus::unbounded ? inf : mx.value;
  out.arg_hi = mx.witness;
  if (need_min) {
    LPOutcome mn = lp_optimize(c, P, Sense::minimize);
    out.lo = mn.status == LPStatus::unbounded ? -inf : mn.value;
    out.arg_lo = mn.witness;
  } else {
    out.lo = out.hi;
    out.arg_lo = out.arg_hi;
  }
  return out;
}

EstimateRegime estimate_regime(Regime r) {
  switch (r) {
    case Regime::weakly_convex: return EstimateRegime::weakly_convex;
    case Regime::dini: return EstimateRegime::dini;
    case Regime::rcr: return EstimateRegime::rcr;
  }
  return EstimateRegime::oracle;
}

}  // namespace

Eigen::VectorXd grad_y_envelope(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  check_point(prob, x, y);
  return (y - solve_inner(prob, x, y).w) / prob.gamma;
}

DerivativeEstimate dir_derivative(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                  const Direction& d, Regime regime, const Assumptions& assume) {
  check_direction(prob, d);
  Local L(prob, x, y);
  DerivativeEstimate e;
  e.regime = estimate_regime(regime);
  e.w = L.sol.w;
  const double v_part = d.v.dot(L.y_term);
  if (d.u.isZero(0.0)) {
    e.lower = e.upper = e.estimate = v_part;
    e.note = "u = 0: v^T (y - w) / gamma";
    return e;
  }

  bool need_min = false;
  switch (regime) {
    case Regime::weakly_convex:
      require_guignard(prob, x, L, assume, e.preconditions);
      break;
    case Regime::dini:
      if (!dini_hypothesis(prob, x, L, d.u, e.preconditions)) {
        const auto& last = e.preconditions.back();
        throw RegimeError(fmt::format("dini regime: MFCQ fails at w and FOSCMS-direction is {} ({})",
                                      to_string(last.verdict), last.detail));
      }
      need_min = true;
      break;
    case Regime::rcr:
      if (!(assume.rcr && assume.rs)) throw RegimeError("rcr regime needs RCR regularity and RS asserted");
      e.preconditions.push_back(note_report(CQCheck::mfcq, "RCR regularity and RS asserted"));
      break;
  }
  L.require_multipliers();

  const double base = L.grad_f.head(prob.n).dot(d.u) + v_part;
  Range range = multiplier_range(L.Lambda, L.x_coeffs(d.u), need_min);
  if (!need_min && !std::isfinite(range.hi))
    throw NumericError("max over Lambda(x,y,w) is unbounded; the regime's hypotheses cannot hold here");
  e.lower = base + range.lo;
  e.upper = base + range.hi;
  e.witnesses = {range.arg_lo, range.arg_hi};
  const bool equal = std::isfinite(e.upper) && e.upper - e.lower <= 1e-12 * std::max(1.0, std::abs(e.upper));
  e.kind = equal ? EstimateKind::exact_formula : EstimateKind::bounds;
  if (equal) e.lower = e.upper;
  e.estimate = e.upper;

  if (regime == Regime::weakly_convex && L.tangent(d.stacked())) {
    LPOutcome dir = lp_optimize(L.x_coeffs(d.u), L.directional(d.stacked()), Sense::maximize);
    if (dir.status == LPStatus::optimal)
      e.note = fmt::format("max over Lambda(x,y,w;u,v) gives {:.12g}", base + dir.value);
  }
  return e;
}

DerivativeEstimate fd_dir_derivative(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                     const Direction& d, const std::vector<double>& steps, Exec exec) {
  check_point(prob, x, y);
  check_direction(prob, d);
  if (steps.empty()) throw ValidationError("at least one step is required");
  for (std::size_t k = 0; k < steps.size(); ++k)
    if (!(steps[k] > 0) || (k > 0 && !(steps[k] < steps[k - 1])))
      throw ValidationError("steps must be positive and decreasing");

  DerivativeEstimate e;
  e.kind = EstimateKind::finite_difference;
  e.regime = EstimateRegime::oracle;
  if (d.is_zero()) {
    e.quotients.assign(steps.size(), 0.0);
    return e;
  }

  std::vector<EvalPoint> pts{{x, y}};
  for (double t : steps) pts.push_back({x + t * d.u, y + t * d.v});
  const auto vals = envelope_batch(prob, pts, InnerOptions::probe(), exec);
  for (std::size_t k = 0; k < vals.size(); ++k)
    if (!vals[k].ok) throw NumericError(fmt::format("inner solve failed at probe {}: {}", k, vals[k].error));
  e.w = vals[0].w;
  for (std::size_t k = 0; k < steps.size(); ++k) e.quotients.push_back((vals[k + 1].value - vals[0].value) / steps[k]);

  const std::size_t K = e.quotients.size();
  const std::size_t first = K >= 3 ? K - 3 : 0;
  const auto [lo, hi] = std::minmax_element(e.quotients.begin() + first, e.quotients.end());
  e.lower = *lo;
  e.upper = *hi;
  if (K >= 2) {
    const double t1 = steps[K - 2], t2 = steps[K - 1];
    const double q1 = e.quotients[K - 2], q2 = e.quotients[K - 1];
    e.estimate = q2 + (q2 - q1) * t2 / (t1 - t2);
  } else {
    e.estimate = e.quotients.back();
  }
  return e;
}

namespace {

// Vertices of {d : lo <= r.d <= hi, a_i + B_i d <= 0 (i active), |d_j| <= box}.
std::vector<Eigen::VectorXd> critical_vertices(const Local& L, const Eigen::VectorXd& u, double lo, double hi,
                                               double box) {
  const int m = static_cast<int>(L.r.size());
  Polyhedron C(m, false);
  const Eigen::VectorXd a = L.x_coeffs(u);
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    C.add_eq(L.r.transpose(), hi);
  } else {
    C.add_ineq(L.r.transpose(), hi);
    C.add_ineq(-L.r.transpose(), -lo);
  }
  for (int i : L.sol.active.indices) C.add_ineq(L.J.row(i).tail(m), -a[i]);
  for (int j = 0; j < m; ++j) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(m);
    e[j] = 1.0;
    C.add_ineq(e, box);
    C.add_ineq(-e, box);
  }
  return vertices(C);
}

void append_points(SubdiffEstimate& s, const Local& L, int n, const Polyhedron& P, const Eigen::VectorXd& d) {
  for (const auto& lam : vertices(P)) {
    s.points.push_back(L.map(lam, n));
    s.multipliers.push_back(lam);
    if (d.size() > 0) s.directions.push_back(d);
  }
}

bool bounded(const Polyhedron& P) {
  Polyhedron H = P;
  H.b_eq.setZero();
  H.b_in.setZero();
  return cone_only_zero(H).only_zero;
}

}  // namespace

SubdiffEstimate subdiff_estimate(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                 const Direction& d, SubdiffSource source, const Assumptions& assume,
                                 const std::vector<Eigen::VectorXd>& critical) {
  check_direction(prob, d);
  Local L(prob, x, y);
  const int n = prob.n, m = prob.m;
  SubdiffEstimate s;
  s.source = source;
  s.w = L.sol.w;
  std::vector<CQReport> pre;

  if (source == SubdiffSource::guignard) {
    require_guignard(prob, x, L, assume, pre);
    L.require_multipliers();
    if (!L.tangent(d.stacked()))
      throw ValidationError("direction leaves the linearized tangent cone of g at (x,w)");
    const Polyhedron P = L.directional(d.stacked());
    append_points(s, L, n, P, {});
    if (s.points.empty()) throw EmptyMultiplierSetError("Lambda(x,y,w;u,v) is empty");
    s.exact = true;
    if (!bounded(P)) s.note = "multiplier set unbounded; points are its vertices";
    return s;
  }

  std::vector<Eigen::VectorXd> dirs = critical;
  if (source == SubdiffSource::union_upper) {
    std::string why;
    const bool mscq = assume.mscq || mscq_sufficient(prob, x, L.sol.w, &why);
    const bool rs = assume.rs || dini_hypothesis(prob, x, L, d.u, pre);
    if (!mscq || !rs) throw RegimeError("union upper estimate needs MSCQ at (x,w) and RS in direction u");
    L.require_multipliers();
    if (dirs.empty()) {
      const Eigen::VectorXd c = L.x_coeffs(d.u);
      const Range range = multiplier_range(L.Lambda, c, true);
      for (const auto& dv : critical_vertices(L, d.u, range.lo, range.hi, critical_box)) {
        if (static_cast<int>(dirs.size()) >= max_critical_directions) break;
        dirs.push_back(dv);
      }
      if (!assume.inner_calm) {
        for (const auto& dv : critical_vertices(L, Eigen::VectorXd::Zero(n), 0.0, 0.0, 1.0)) {
          if (static_cast<int>(dirs.size()) >= max_critical_directions) break;
          const double norm = dv.norm();
          if (norm > tol::vertex_dedup) dirs.push_back(dv / norm);
        }
      }
    }
    s.is_convex_hull = false;
    for (const auto& dv : dirs) {
      Eigen::VectorXd ud(n + m);
      ud << d.u, dv;
      append_points(s, L, n, L.directional(ud), ud);
    }
    s.note = fmt::format("{} critical directions{}", dirs.size(), assume.inner_calm ? " (inner calm*)" : "");
    return s;
  }

  if (!(assume.rcr && assume.rs)) throw RegimeError("rcr upper estimate needs RCR regularity and RS asserted");
  L.require_multipliers();
  if (dirs.empty()) {
    const Range range = multiplier_range(L.Lambda, L.x_coeffs(d.u), false);
    if (!std::isfinite(range.hi)) throw NumericError("max over Lambda(x,y,w) is unbounded");
    for (const auto& dv : critical_vertices(L, d.u, range.hi, range.hi, critical_box)) {
      if (static_cast<int>(dirs.size()) >= max_critical_directions) break;
      dirs.push_back(dv);
    }
  }
  Polyhedron P = L.Lambda;
  for (const auto& dv : dirs) {
    Eigen::VectorXd ud(n + m);
    ud << d.u, dv;
    const Polyhedron Pd = L.directional(ud);
    for (Eigen::Index k = P.num_eq(); k < Pd.num_eq(); ++k) P.add_eq(Pd.A_eq.row(k), Pd.b_eq[k]);
  }
  append_points(s, L, n, P, {});
  s.directions = dirs;
  s.note = dirs.empty() ? "no critical direction found; estimate is over Lambda(x,y,w)"
                        : fmt::format("{} critical directions", dirs.size());
  return s;
}

WeakConvexityReport weak_convexity_check(const BilevelProblem& prob, const Eigen::VectorXd& lo,
                                         const Eigen::VectorXd& hi, int samples, unsigned long long seed,
                                         std::optional<double> rho_v, Exec exec) {
  if (!joint_flags(prob))
    throw RegimeError("weak convexity of v_gamma needs f jointly weakly convex and g jointly quasiconvex");
  WeakConvexityReport r;
  r.rho_joint = prob.joint_modulus();
  if (prob.gamma * r.rho_joint >= 1.0) throw RegimeError("gamma * rho_f must be below 1");
  r.rho_v = rho_v.value_or(r.rho_joint / (1.0 - prob.gamma * r.rho_joint) + 1e-9);
  r.midpoint = midpoint_check(prob, lo, hi, samples, r.rho_v, seed, exec);
  return r;
}

}  // namespace bec

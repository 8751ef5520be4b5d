#include "bec/certify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "bec/error.hpp"
#include "bec/lpcore.hpp"

namespace bec {

const char* to_string(QNVariant v) {
  switch (v) {
    case QNVariant::i: return "i";
    case QNVariant::ii: return "ii";
    case QNVariant::iii: return "iii";
  }
  return "?";
}

const char* to_string(StationaritySystem s) {
  switch (s) {
    case StationaritySystem::skkt: return "sKKT";
    case StationaritySystem::wckkt: return "wcKKT";
  }
  return "?";
}

namespace {

constexpr double direction_row_tol = 1e-9;
constexpr double eps = std::numeric_limits<double>::epsilon();

void check_point(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != prob.n || y.size() != prob.m) throw ValidationError("point must have dimensions (n, m)");
  if (!x.allFinite() || !y.allFinite()) throw ValidationError("point must be finite");
}

void check_direction(const BilevelProblem& prob, const Direction& d) {
  if (d.u.size() != prob.n || d.v.size() != prob.m) throw ValidationError("direction must have dimensions (n, m)");
  if (!d.stacked().allFinite()) throw ValidationError("direction must be finite");
}

Eigen::VectorXd values(const std::vector<Expr>& cs, const EvalPoint& p) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(cs.size()));
  for (std::size_t i = 0; i < cs.size(); ++i) v[static_cast<Eigen::Index>(i)] = eval(cs[i], p);
  return v;
}

Eigen::VectorXd normalized(const Eigen::VectorXd& d) {
  const double n = d.norm();
  return n > 0 ? Eigen::VectorXd(d / n) : d;
}

// Upper- and lower-level data at a feasible point of the value-function reformulation.
struct Upper {
  EvalPoint p;
  Eigen::VectorXd grad_F, grad_f;
  Eigen::MatrixXd Jg, JG;  // p x (n+m), q x (n+m)
  Eigen::VectorXd gv, Gv;
  ActiveSet ag, aG;

  Upper(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) : p{x, y} {
    check_point(prob, x, y);
    grad_F = gradient(prob.F, p);
    grad_f = gradient(prob.f, p);
    Jg = constraint_jacobian(prob.g, p);
    JG = constraint_jacobian(prob.G, p);
    gv = values(prob.g, p);
    Gv = values(prob.G, p);
    ag = active_set(prob.g, p, tol::active);
    aG = active_set(prob.G, p, tol::active);
  }
};

// Lambda(x,y) at a point where w = y.
Polyhedron base_multipliers(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return inner_multiplier_polyhedron(prob, x, y, y);
}

// Adds lambda^T J(u,v) = 0 over the active rows to a multiplier polyhedron.
void add_direction_row(Polyhedron& P, const Eigen::MatrixXd& J, const ActiveSet& active, const Eigen::VectorXd& ud,
                       int offset = 0) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(P.num_vars);
  for (int i : active.indices) {
    const double c = J.row(i).dot(ud);
    if (std::abs(c) > direction_row_tol) row[offset + i] = c;
  }
  if (!row.isZero(0.0)) P.add_eq(row, 0.0);
}

}  // namespace

Regime default_regime(const BilevelProblem& prob) {
  const bool joint = prob.f_convexity == FConvexity::jointly_weakly_convex &&
                     prob.g_convexity == GConvexity::jointly_quasiconvex;
  return joint ? Regime::weakly_convex : Regime::dini;
}

MultiplierSet lower_multiplier_set(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                   const std::optional<Direction>& d) {
  check_point(prob, x, y);
  MultiplierSet s;
  s.active = active_set(prob.g, {x, y}, tol::active);
  s.base = base_multipliers(prob, x, y);
  if (d) {
    check_direction(prob, *d);
    const Eigen::MatrixXd J = constraint_jacobian(prob.g, {x, y});
    const Eigen::VectorXd ud = normalized(d->stacked());
    for (int i : s.active.indices)
      if (J.row(i).dot(ud) > direction_row_tol)
        throw ValidationError(fmt::format("direction leaves the linearized tangent cone of g (row {})", i + 1));
    Polyhedron P = s.base;
    add_direction_row(P, J, s.active, ud);
    s.directional = P;
  }
  return s;
}

void require_vp_feasible(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  check_point(prob, x, y);
  const EvalPoint p{x, y};
  std::vector<int> violated;
  std::vector<std::string> parts;
  const Eigen::VectorXd gv = values(prob.g, p), Gv = values(prob.G, p);
  // Indices: g rows first, then G rows offset by p, then p+q for f - v_gamma.
  for (int i = 0; i < prob.p(); ++i)
    if (gv[i] > tol::active) {
      violated.push_back(i);
      parts.push_back(fmt::format("g{} = {:.6g}", i + 1, gv[i]));
    }
  for (int j = 0; j < prob.q(); ++j)
    if (Gv[j] > tol::active) {
      violated.push_back(prob.p() + j);
      parts.push_back(fmt::format("G{} = {:.6g}", j + 1, Gv[j]));
    }
  if (violated.empty()) {
    const double fv = eval(prob.f, p);
    const double gap = fv - solve_inner(prob, x, y).value;
    if (gap > tol::certificate * std::max(1.0, std::abs(fv))) {
      violated.push_back(prob.p() + prob.q());
      parts.push_back(fmt::format("f - v_gamma = {:.6g}", gap));
    }
  }
  if (!violated.empty()) {
    std::string msg = "point is infeasible:";
    for (const auto& s : parts) msg += " " + s;
    throw InfeasiblePointError(msg, violated);
  }
}

CriticalConeReport in_critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                    const Direction& d, Regime regime, const Assumptions& assume) {
  check_direction(prob, d);
  require_vp_feasible(prob, x, y);
  CriticalConeReport r;
  if (d.is_zero()) return r;
  Upper U(prob, x, y);
  const Eigen::VectorXd s = normalized(d.stacked());
  const double t = tol::certificate;
  auto add = [&](std::string name, double value, double lo, double hi) {
    const bool ok = value >= lo - t && value <= hi + t;
    r.rows.push_back({std::move(name), value, lo, hi, ok});
    r.inside = r.inside && ok;
  };
  const double inf = std::numeric_limits<double>::infinity();
  add("grad F . d", U.grad_F.dot(s), -inf, 0.0);
  for (int i : U.ag.indices) add(fmt::format("grad g{} . d", i + 1), U.Jg.row(i).dot(s), -inf, 0.0);
  for (int j : U.aG.indices) add(fmt::format("grad G{} . d", j + 1), U.JG.row(j).dot(s), -inf, 0.0);
  r.derivative = dir_derivative(prob, x, y, make_direction(prob, s), regime, assume);
  add("grad f . d - v'(d)", U.grad_f.dot(s), r.derivative->lower, r.derivative->upper);
  return r;
}

// ---------------------------------------------------------------- certificates

namespace {

// Variables [alpha, lambda_g (p), lambda_G (q), mu (p)] with mu = alpha * lambda_bar.
struct CertLayout {
  int p, q;
  int alpha() const { return 0; }
  int lg(int i) const { return 1 + i; }
  int lG(int j) const { return 1 + p + j; }
  int mu(int i) const { return 1 + p + q + i; }
  int size() const { return 1 + 2 * p + q; }
};

Polyhedron certificate_polyhedron(const BilevelProblem& prob, const Upper& U, const std::optional<Eigen::VectorXd>& s) {
  const int n = prob.n, m = prob.m, p = prob.p(), q = prob.q();
  const CertLayout L{p, q};
  Polyhedron P(L.size());
  for (int k = 0; k < n + m; ++k) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(L.size());
    for (int i = 0; i < p; ++i) {
      row[L.lg(i)] = U.Jg(i, k);
      row[L.mu(i)] = -U.Jg(i, k);
    }
    for (int j = 0; j < q; ++j) row[L.lG(j)] = U.JG(j, k);
    P.add_eq(row, -U.grad_F[k]);
  }
  for (int k = 0; k < m; ++k) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(L.size());
    row[L.alpha()] = U.grad_f[n + k];
    for (int i = 0; i < p; ++i) row[L.mu(i)] = U.Jg(i, n + k);
    P.add_eq(row, 0.0);
  }
  for (int i = 0; i < p; ++i)
    if (!U.ag.contains(i)) {
      P.fix_zero(L.lg(i));
      P.fix_zero(L.mu(i));
    }
  for (int j = 0; j < q; ++j)
    if (!U.aG.contains(j)) P.fix_zero(L.lG(j));
  if (s) {
    for (int i : U.ag.indices)
      if (std::abs(U.Jg.row(i).dot(*s)) > direction_row_tol) P.fix_zero(L.lg(i));
    for (int j : U.aG.indices)
      if (std::abs(U.JG.row(j).dot(*s)) > direction_row_tol) P.fix_zero(L.lG(j));
    add_direction_row(P, U.Jg, U.ag, *s, L.mu(0));
  }
  return P;
}

Eigen::VectorXd l1_objective(const CertLayout& L) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(L.size());
  c[L.alpha()] = 1.0;
  for (int i = 0; i < L.p; ++i) c[L.lg(i)] = 1.0;
  for (int j = 0; j < L.q; ++j) c[L.lG(j)] = 1.0;
  return c;
}

// Minimizes alpha + sum(lambda), then maximizes alpha among the minimizers.
std::optional<Eigen::VectorXd> select(const Polyhedron& P, const CertLayout& L) {
  const Eigen::VectorXd c = l1_objective(L);
  const LPOutcome first = lp_optimize(c, P, Sense::minimize);
  if (first.status != LPStatus::optimal) return std::nullopt;
  Polyhedron Q = P;
  Q.add_ineq(c.transpose(), first.value + 1e-3 * tol::lp_feasibility * std::max(1.0, std::abs(first.value)));
  Eigen::VectorXd e = Eigen::VectorXd::Zero(L.size());
  e[L.alpha()] = 1.0;
  const LPOutcome second = lp_optimize(e, Q, Sense::maximize);
  return second.status == LPStatus::optimal ? second.witness : first.witness;
}

double objective(const Eigen::VectorXd& z, const CertLayout& L) { return l1_objective(L).dot(z); }

}  // namespace

double certificate_violation(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                             const StationarityCertificate& c) {
  Upper U(prob, x, y);
  double v = 0.0;
  auto bump = [&](double a) { v = std::max(v, a); };
  const Eigen::VectorXd stat = U.grad_F + U.Jg.transpose() * (c.lambda_g - c.alpha * c.lambda_bar) +
                               U.JG.transpose() * c.lambda_G;
  bump(stat.lpNorm<Eigen::Infinity>());
  const Eigen::VectorXd lam_row = U.grad_f.tail(prob.m) + U.Jg.rightCols(prob.m).transpose() * c.lambda_bar;
  bump(lam_row.lpNorm<Eigen::Infinity>());
  bump(-c.alpha);
  for (int i = 0; i < prob.p(); ++i) {
    bump(-c.lambda_g[i]);
    bump(-c.lambda_bar[i]);
    bump(std::abs(c.lambda_g[i] * U.gv[i]));
    bump(std::abs(c.lambda_bar[i] * U.gv[i]));
  }
  for (int j = 0; j < prob.q(); ++j) {
    bump(-c.lambda_G[j]);
    bump(std::abs(c.lambda_G[j] * U.Gv[j]));
  }
  if (c.system == StationaritySystem::wckkt) {
    const Eigen::VectorXd s = normalized(c.direction.stacked());
    const Eigen::VectorXd dg = U.Jg * s, dG = U.JG * s;
    for (int i = 0; i < prob.p(); ++i) {
      bump(std::abs(c.lambda_g[i] * dg[i]));
      bump(std::abs(c.lambda_bar[i] * dg[i]));
    }
    for (int j = 0; j < prob.q(); ++j) bump(std::abs(c.lambda_G[j] * dG[j]));
  }
  return v;
}

std::optional<StationarityCertificate> verify_stationarity(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                                           const Eigen::VectorXd& y,
                                                           const std::optional<Direction>& d,
                                                           StationaritySystem system, std::optional<Regime> regime,
                                                           const Assumptions& assume) {
  check_point(prob, x, y);
  require_vp_feasible(prob, x, y);
  Direction dir{Eigen::VectorXd::Zero(prob.n), Eigen::VectorXd::Zero(prob.m)};
  std::optional<Eigen::VectorXd> s;
  if (system == StationaritySystem::wckkt) {
    if (!d) throw ValidationError("wcKKT needs a direction");
    check_direction(prob, *d);
    dir = *d;
    const CriticalConeReport cone = in_critical_cone(prob, x, y, dir, regime.value_or(default_regime(prob)), assume);
    if (!cone.inside) {
      std::string bad;
      for (const auto& row : cone.rows)
        if (!row.ok) bad += fmt::format(" {} = {:.6g} not in [{:.6g}, {:.6g}];", row.name, row.value, row.lower, row.upper);
      throw ValidationError("direction is not in the critical cone:" + bad);
    }
    if (!dir.is_zero()) s = normalized(dir.stacked());
  }

  const MultiplierSet ms = lower_multiplier_set(prob, x, y, s ? std::optional<Direction>(dir) : std::nullopt);
  const LPOutcome lam0 = lp_optimize(Eigen::VectorXd::Ones(prob.p()), ms.effective(), Sense::minimize);
  if (lam0.status != LPStatus::optimal) return std::nullopt;

  Upper U(prob, x, y);
  const CertLayout L{prob.p(), prob.q()};
  const Polyhedron P = certificate_polyhedron(prob, U, s);

  auto usable = [&](const Eigen::VectorXd& z) {
    return z[L.alpha()] > 1e-9 || z.segment(L.mu(0), L.p).lpNorm<Eigen::Infinity>() <= 1e-9;
  };
  std::optional<Eigen::VectorXd> best;
  std::string branch;
  if (auto z = select(P, L); z && usable(*z)) {
    best = z;
    branch = "general";
  } else {
    Polyhedron A = P;
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(L.size());
    e[L.alpha()] = 1.0;
    A.add_eq(e, 1.0);
    Polyhedron B = P;
    B.fix_zero(L.alpha());
    for (int i = 0; i < L.p; ++i) B.fix_zero(L.mu(i));
    const auto za = select(A, L), zb = select(B, L);
    if (za && (!zb || objective(*za, L) <= objective(*zb, L) + 1e-9)) {
      best = za;
      branch = "alpha=1";
    } else if (zb) {
      best = zb;
      branch = "alpha=0";
    }
  }
  if (!best) return std::nullopt;

  const Eigen::VectorXd& z = *best;
  StationarityCertificate c;
  c.system = system;
  c.direction = dir;
  c.branch = branch;
  c.alpha = std::max(0.0, z[L.alpha()]);
  c.lambda_g = z.segment(L.lg(0), L.p).cwiseMax(0.0);
  c.lambda_G = z.segment(L.lG(0), L.q).cwiseMax(0.0);
  if (c.alpha > 1e-9) {
    c.lambda_bar = (z.segment(L.mu(0), L.p) / c.alpha).cwiseMax(0.0);
  } else {
    c.alpha = 0.0;
    c.lambda_bar = lam0.witness.cwiseMax(0.0);
  }
  c.induced.mu_G = c.lambda_G;
  c.induced.mu_g = c.lambda_g - c.alpha * c.lambda_bar;
  c.induced.mu_e = Eigen::VectorXd::Zero(prob.m);
  c.induced.mu_lambda = Eigen::VectorXd::Zero(prob.p());
  c.residual = certificate_violation(prob, x, y, c);
  const double scale = std::max({1.0, c.alpha, c.lambda_g.lpNorm<Eigen::Infinity>(),
                                 c.lambda_G.lpNorm<Eigen::Infinity>(), c.lambda_bar.lpNorm<Eigen::Infinity>()});
  if (c.residual > tol::certificate * scale)
    throw NumericError(fmt::format("certificate failed re-verification (residual {:.3g})", c.residual));
  return c;
}

// ---------------------------------------------------------------- S-stationarity

namespace {

struct SLayout {
  int q, p, m;
  int G(int j) const { return j; }
  int g(int i) const { return q + i; }
  int e(int k) const { return q + p + k; }
  int l(int i) const { return q + p + m + i; }
  int size() const { return q + 2 * p + m; }
};

// Jacobian of l = grad_y f + grad_y g^T lambda with respect to (x, y), m x (n+m).
Eigen::MatrixXd lagrangian_jacobian(const BilevelProblem& prob, const EvalPoint& p, const Eigen::VectorXd& lambda) {
  Eigen::MatrixXd H = hessian(prob.f, p);
  for (int i = 0; i < prob.p(); ++i)
    if (lambda[i] != 0.0) H += lambda[i] * hessian(prob.g[i], p);
  return H.bottomRows(prob.m);
}

std::vector<int> zero_set(const Upper& U, const Eigen::VectorXd& lambda) {
  std::vector<int> I0;
  for (int i = 0; i < lambda.size(); ++i)
    if (lambda[i] <= tol::active && std::abs(U.gv[i]) <= tol::active) I0.push_back(i);
  return I0;
}

void require_triple(const BilevelProblem& prob, const Upper& U, const Eigen::VectorXd& lambda) {
  if (lambda.size() != prob.p()) throw ValidationError("lambda must have length p");
  std::vector<std::string> bad;
  for (int i = 0; i < prob.p(); ++i) {
    if (U.gv[i] > tol::active) bad.push_back(fmt::format("g{} = {:.6g}", i + 1, U.gv[i]));
    if (lambda[i] < -tol::active) bad.push_back(fmt::format("lambda{} = {:.6g}", i + 1, lambda[i]));
    if (std::abs(lambda[i] * U.gv[i]) > tol::certificate)
      bad.push_back(fmt::format("lambda{} g{} = {:.6g}", i + 1, i + 1, lambda[i] * U.gv[i]));
  }
  for (int j = 0; j < prob.q(); ++j)
    if (U.Gv[j] > tol::active) bad.push_back(fmt::format("G{} = {:.6g}", j + 1, U.Gv[j]));
  const Eigen::VectorXd row = U.grad_f.tail(prob.m) + U.Jg.rightCols(prob.m).transpose() * lambda;
  if (row.lpNorm<Eigen::Infinity>() > tol::certificate * std::max(1.0, lambda.lpNorm<Eigen::Infinity>()))
    bad.push_back(fmt::format("|grad_y f + grad_y g^T lambda| = {:.3g}", row.lpNorm<Eigen::Infinity>()));
  if (!bad.empty()) {
    std::string msg = "infeasible triple:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw ValidationError(msg);
  }
}

}  // namespace

double s_system_violation(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& lambda_bar, const SMultipliers& mu) {
  Upper U(prob, x, y);
  if (mu.mu_G.size() != prob.q() || mu.mu_g.size() != prob.p() || mu.mu_e.size() != prob.m ||
      mu.mu_lambda.size() != prob.p())
    throw ValidationError("multiplier dimensions do not match the problem");
  const Eigen::MatrixXd Lxy = lagrangian_jacobian(prob, U.p, lambda_bar);
  double v = 0.0;
  auto bump = [&](double a) { v = std::max(v, a); };
  bump((U.grad_F + U.JG.transpose() * mu.mu_G + U.Jg.transpose() * mu.mu_g + Lxy.transpose() * mu.mu_e)
           .lpNorm<Eigen::Infinity>());
  bump((U.Jg.rightCols(prob.m) * mu.mu_e - mu.mu_lambda).lpNorm<Eigen::Infinity>());
  for (int j = 0; j < prob.q(); ++j) {
    bump(-mu.mu_G[j]);
    bump(std::abs(mu.mu_G[j] * U.Gv[j]));
  }
  for (int i = 0; i < prob.p(); ++i) {
    bump(std::abs(mu.mu_g[i] * U.gv[i]));
    bump(std::abs(mu.mu_lambda[i] * lambda_bar[i]));
  }
  for (int i : zero_set(U, lambda_bar)) {
    bump(-mu.mu_g[i]);
    bump(-mu.mu_lambda[i]);
  }
  return v;
}

SStationarityReport verify_s_stationarity(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y, const Eigen::VectorXd& lambda_bar) {
  Upper U(prob, x, y);
  require_triple(prob, U, lambda_bar);
  const int n = prob.n, m = prob.m, p = prob.p(), q = prob.q();
  const SLayout L{q, p, m};
  const Eigen::MatrixXd Lxy = lagrangian_jacobian(prob, U.p, lambda_bar);
  const Eigen::MatrixXd By = U.Jg.rightCols(m);

  SStationarityReport r;
  r.I0 = zero_set(U, lambda_bar);
  Polyhedron P(L.size(), false);
  for (int j = 0; j < q; ++j) {
    P.nonneg[L.G(j)] = true;
    if (!U.aG.contains(j)) P.fix_zero(L.G(j));
  }
  for (int i = 0; i < p; ++i) {
    if (!U.ag.contains(i)) P.fix_zero(L.g(i));
    if (lambda_bar[i] > tol::active) P.fix_zero(L.l(i));
  }
  for (int i : r.I0) {
    P.nonneg[L.g(i)] = true;
    P.nonneg[L.l(i)] = true;
  }
  for (int k = 0; k < n + m; ++k) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(L.size());
    for (int j = 0; j < q; ++j) row[L.G(j)] = U.JG(j, k);
    for (int i = 0; i < p; ++i) row[L.g(i)] = U.Jg(i, k);
    for (int a = 0; a < m; ++a) row[L.e(a)] = Lxy(a, k);
    P.add_eq(row, -U.grad_F[k]);
  }
  for (int i = 0; i < p; ++i) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(L.size());
    for (int a = 0; a < m; ++a) row[L.e(a)] = By(i, a);
    row[L.l(i)] = -1.0;
    P.add_eq(row, 0.0);
  }

  const LPOutcome out = lp_feasible(P);
  r.marginal = out.marginal;
  if (out.status != LPStatus::optimal) return r;
  const Eigen::VectorXd& z = out.witness;
  r.mu.mu_G = z.segment(0, q);
  r.mu.mu_g = z.segment(q, p);
  r.mu.mu_e = z.segment(q + p, m);
  r.mu.mu_lambda = z.segment(q + p + m, p);
  r.residual = s_system_violation(prob, x, y, lambda_bar, r.mu);
  r.stationary = r.residual <= tol::certificate * std::max(1.0, z.lpNorm<Eigen::Infinity>());
  return r;
}

MpccComparison compare_with_mpcc(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                 const std::optional<Direction>& d, std::optional<Regime> regime,
                                 const Assumptions& assume) {
  MpccComparison c;
  const StationaritySystem sys = d ? StationaritySystem::wckkt : StationaritySystem::skkt;
  c.certificate = verify_stationarity(prob, x, y, d, sys, regime, assume);
  Upper U(prob, x, y);
  c.degenerate = prob.q() == 0 && U.ag.indices.empty();

  if (d && !d->is_zero()) {
    const Eigen::VectorXd s = normalized(d->stacked());
    for (int i : U.ag.indices)
      if (std::abs(U.Jg.row(i).dot(s)) > direction_row_tol) {
        c.directional_rows.push_back(fmt::format("lambda_g{} = 0 (grad g{} . d != 0)", i + 1, i + 1));
        c.directional_rows.push_back(fmt::format("lambda_bar{} = 0 (grad g{} . d != 0)", i + 1, i + 1));
      }
    for (int j : U.aG.indices)
      if (std::abs(U.JG.row(j).dot(s)) > direction_row_tol)
        c.directional_rows.push_back(fmt::format("lambda_G{} = 0 (grad G{} . d != 0)", j + 1, j + 1));
  }

  if (c.certificate) {
    const auto& cert = *c.certificate;
    c.induced_violation = s_system_violation(prob, x, y, cert.lambda_bar, cert.induced);
    const double scale = std::max({1.0, cert.alpha, cert.lambda_g.lpNorm<Eigen::Infinity>(),
                                   cert.lambda_bar.lpNorm<Eigen::Infinity>(), cert.lambda_G.lpNorm<Eigen::Infinity>()});
    c.induced_valid = c.induced_violation <= tol::certificate * scale;
    c.s_report = verify_s_stationarity(prob, x, y, cert.lambda_bar);
    return c;
  }

  std::vector<Eigen::VectorXd> candidates;
  const Polyhedron Lambda = base_multipliers(prob, x, y);
  if (Lambda.num_vars <= max_vertex_vars) {
    candidates = vertices(Lambda);
  } else if (const LPOutcome o = lp_feasible(Lambda); o.status == LPStatus::optimal) {
    candidates.push_back(o.witness);
  }
  for (const auto& lam : candidates) {
    const Eigen::VectorXd l = lam.cwiseMax(0.0);
    if (verify_s_stationarity(prob, x, y, l).stationary) {
      c.gap = true;
      c.gap_multipliers.push_back(l);
    }
  }
  return c;
}

// ---------------------------------------------------------------- quasi-normality

namespace {

struct VariantSetup {
  Regime regime;
  SubdiffSource source;
  Assumptions assume;
  std::string note;
};

VariantSetup variant_setup(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                           const Direction& s, QNVariant variant, const Assumptions& assume) {
  VariantSetup v{Regime::weakly_convex, SubdiffSource::guignard, assume, {}};
  switch (variant) {
    case QNVariant::ii:
      v.assume.guignard = assume.guignard || assume.mscq;
      v.note = "W(x,y,y;u,v) over Lambda(x,y;u,v)";
      break;
    case QNVariant::i: {
      v.regime = Regime::dini;
      v.source = SubdiffSource::union_upper;
      if (check_mfcq(prob, x, y).verdict == Verdict::holds) {
        v.note = "MFCQ at y; union over critical directions";
        break;
      }
      const bool fo = check_foscms_direction(prob, x, y, s.u).verdict == Verdict::holds &&
                      check_foscms_direction(prob, x, y, -s.u).verdict == Verdict::holds;
      if (!(fo && assume.mscq && assume.rs))
        throw RegimeError("variant (i) needs MFCQ at y, or FOSCMS in directions +-u with MSCQ and RS asserted");
      v.note = "FOSCMS in +-u with MSCQ and RS; union over critical directions";
      break;
    }
    case QNVariant::iii:
      if (!(assume.rcr && assume.rs)) throw RegimeError("variant (iii) needs RCR regularity and RS asserted");
      v.regime = Regime::rcr;
      v.source = SubdiffSource::rcr_upper;
      v.note = "W(x,y,y;u,d) common to the critical directions";
      break;
  }
  return v;
}

struct Pattern {
  bool alpha = false;
  std::vector<int> g, G;
  Eigen::VectorXd witness;
};

bool same(const Pattern& a, const Pattern& b) { return a.alpha == b.alpha && a.g == b.g && a.G == b.G; }

struct Probe {
  bool ok = false;
  double fv = 0.0;  // f - v_gamma
  double scale = 0.0;
  Eigen::VectorXd gv, Gv;
};

// Smallest margin of the strict inequalities a pattern needs (positive means all hold).
double margin(const Pattern& pat, const Probe& pr, std::vector<double>* vals) {
  double mn = std::numeric_limits<double>::infinity();
  if (pat.alpha) {
    const double thr = 16.0 * eps * pr.scale;
    mn = std::min(mn, pr.fv - thr);
    if (vals) vals->push_back(pr.fv);
  }
  for (int i : pat.g) {
    mn = std::min(mn, pr.gv[i]);
    if (vals) vals->push_back(pr.gv[i]);
  }
  for (int j : pat.G) {
    mn = std::min(mn, pr.Gv[j]);
    if (vals) vals->push_back(pr.Gv[j]);
  }
  return mn;
}

}  // namespace

CQReport check_quasi_normality(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                               const Direction& d, QNVariant variant, const Assumptions& assume,
                               const SamplingPlan& plan) {
  check_direction(prob, d);
  if (d.is_zero()) throw ValidationError("quasi-normality needs a nonzero direction");
  require_vp_feasible(prob, x, y);
  const Eigen::VectorXd sd = normalized(d.stacked());
  const Direction s = make_direction(prob, sd);
  const VariantSetup setup = variant_setup(prob, x, y, s, variant, assume);
  Upper U(prob, x, y);

  CQReport r;
  r.check = CQCheck::quasi_normality_direction;
  const DerivativeEstimate der = dir_derivative(prob, x, y, s, setup.regime, setup.assume);
  SubdiffEstimate sub;
  try {
    sub = subdiff_estimate(prob, x, y, s, setup.source, setup.assume);
  } catch (const EmptyMultiplierSetError&) {
    sub.points.clear();
  }

  const int n = prob.n, m = prob.m, p = prob.p(), q = prob.q();
  const int K = static_cast<int>(sub.points.size());
  const int nv = 1 + K + p + q;
  auto beta = [](int k) { return 1 + k; };
  auto ng = [&](int i) { return 1 + K + i; };
  auto nG = [&](int j) { return 1 + K + p + j; };

  Polyhedron P(nv);
  for (int c = 0; c < n + m; ++c) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
    row[0] = U.grad_f[c];
    for (int k = 0; k < K; ++k) row[beta(k)] = -sub.points[static_cast<std::size_t>(k)][c];
    for (int i = 0; i < p; ++i) row[ng(i)] = U.Jg(i, c);
    for (int j = 0; j < q; ++j) row[nG(j)] = U.JG(j, c);
    P.add_eq(row, 0.0);
  }
  {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
    row[0] = -1.0;
    for (int k = 0; k < K; ++k) row[beta(k)] = 1.0;
    P.add_eq(row, 0.0);
  }
  for (int i = 0; i < p; ++i)
    if (!U.ag.contains(i) || std::abs(U.Jg.row(i).dot(sd)) > direction_row_tol) P.fix_zero(ng(i));
  for (int j = 0; j < q; ++j)
    if (!U.aG.contains(j) || std::abs(U.JG.row(j).dot(sd)) > direction_row_tol) P.fix_zero(nG(j));
  const double fd = U.grad_f.dot(sd);
  const double t = tol::certificate;
  const bool zero_admissible = fd >= der.lower - t && fd <= der.upper + t;
  if (!zero_admissible) P.fix_zero(0);

  std::vector<int> coords{0};
  for (int i = 0; i < p; ++i) coords.push_back(ng(i));
  for (int j = 0; j < q; ++j) coords.push_back(nG(j));

  const bool alpha_free = zero_admissible && K > 0;
  const std::string head = fmt::format("variant ({}): {}; {} points; alpha {}", to_string(variant), setup.note, K,
                                       alpha_free ? "free" : "forced to 0");
  const ConeTest cone = cone_only_zero(P, coords);
  r.marginal = cone.marginal;
  if (cone.only_zero) {
    r.detail = head + "; the multiplier cone is {0}";
    return r;
  }

  // Extreme rays of the projected cone, through the vertices of its slice sum(coords) = 1.
  std::vector<Eigen::VectorXd> rays;
  if (nv <= max_vertex_vars) {
    Polyhedron S = P;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
    for (int c : coords) row[c] = 1.0;
    S.add_eq(row, 1.0);
    rays = vertices(S);
  }
  if (rays.empty()) rays = cone.extreme_witnesses;
  std::vector<Pattern> patterns;
  for (const auto& z : rays) {
    Pattern pat;
    pat.alpha = z[0] > 1e-9;
    for (int i = 0; i < p; ++i)
      if (z[ng(i)] > 1e-9) pat.g.push_back(i);
    for (int j = 0; j < q; ++j)
      if (z[nG(j)] > 1e-9) pat.G.push_back(j);
    if (!pat.alpha && pat.g.empty() && pat.G.empty()) continue;
    Eigen::VectorXd w(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t c = 0; c < coords.size(); ++c) w[static_cast<Eigen::Index>(c)] = z[coords[c]];
    pat.witness = w;
    if (std::none_of(patterns.begin(), patterns.end(), [&](const Pattern& o) { return same(o, pat); }))
      patterns.push_back(pat);
  }
  for (const auto& pat : patterns) r.lp_witnesses.push_back(pat.witness);

  // Sampled sequences t_k -> 0 with directions in a cone around d.
  std::mt19937_64 rng(plan.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Eigen::VectorXd> dirs{sd};
  for (int k = 0; k < plan.directions; ++k) {
    Eigen::VectorXd g(sd.size());
    for (Eigen::Index c = 0; c < g.size(); ++c) g[c] = gauss(rng);
    g -= g.dot(sd) * sd;
    if (g.norm() < 1e-12) continue;
    g.normalize();
    const double phi = plan.half_angle * unif(rng);
    dirs.push_back(std::cos(phi) * sd + std::sin(phi) * g);
  }
  std::vector<EvalPoint> pts;
  for (double tk : plan.t)
    for (const auto& e : dirs) pts.push_back({x + tk * e.head(n), y + tk * e.tail(m)});
  const auto env = envelope_batch(prob, pts, InnerOptions::probe());
  std::vector<Probe> probes(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (!env[k].ok) continue;
    Probe& pr = probes[k];
    pr.ok = true;
    const double fv = eval(prob.f, pts[k]);
    pr.fv = fv - env[k].value;
    pr.scale = std::max(std::abs(fv), std::abs(env[k].value));
    pr.gv = values(prob.g, pts[k]);
    pr.Gv = values(prob.G, pts[k]);
  }

  const std::size_t D = dirs.size();
  for (const auto& pat : patterns) {
    std::vector<SampleEvidence> seq;
    for (std::size_t a = 0; a < plan.t.size(); ++a) {
      for (std::size_t b = 0; b < D; ++b) {
        const Probe& pr = probes[a * D + b];
        if (!pr.ok) continue;
        std::vector<double> vals;
        if (margin(pat, pr, &vals) > 0) {
          seq.push_back({plan.t[a], dirs[b], vals});
          break;
        }
      }
      if (seq.size() != a + 1) break;
    }
    if (seq.size() == plan.t.size()) {
      r.verdict = Verdict::fails;
      r.sampling_evidence = seq;
      r.lp_witnesses = {pat.witness};
      r.detail = head + "; a sampled sequence realizes the sign conditions for a nonzero multiplier";
      return r;
    }
  }

  // Closest approach per step for each pattern.
  for (const auto& pat : patterns) {
    for (std::size_t a = 0; a < plan.t.size(); ++a) {
      double best = -std::numeric_limits<double>::infinity();
      SampleEvidence ev;
      for (std::size_t b = 0; b < D; ++b) {
        const Probe& pr = probes[a * D + b];
        if (!pr.ok) continue;
        std::vector<double> vals;
        const double mg = margin(pat, pr, &vals);
        if (mg > best) {
          best = mg;
          ev = {plan.t[a], dirs[b], vals};
        }
      }
      if (std::isfinite(best)) r.sampling_evidence.push_back(ev);
    }
  }
  r.verdict = Verdict::certificate_modulo_sampling;
  r.detail = fmt::format("{}; {} nonzero multiplier patterns, none realized over {} steps x {} directions", head,
                         patterns.size(), plan.t.size(), D);
  return r;
}

}  // namespace bec

#include "bec/lpcore.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "bec/error.hpp"

namespace bec {

Polyhedron::Polyhedron(int vars, bool all_nonneg)
    : num_vars(vars),
      A_eq(0, vars),
      b_eq(0),
      A_in(0, vars),
      b_in(0),
      nonneg(static_cast<std::size_t>(vars), all_nonneg) {}

void Polyhedron::add_eq(const Eigen::RowVectorXd& row, double rhs) {
  A_eq.conservativeResize(A_eq.rows() + 1, num_vars);
  A_eq.row(A_eq.rows() - 1) = row;
  b_eq.conservativeResize(b_eq.size() + 1);
  b_eq[b_eq.size() - 1] = rhs;
}

void Polyhedron::add_ineq(const Eigen::RowVectorXd& row, double rhs) {
  A_in.conservativeResize(A_in.rows() + 1, num_vars);
  A_in.row(A_in.rows() - 1) = row;
  b_in.conservativeResize(b_in.size() + 1);
  b_in[b_in.size() - 1] = rhs;
}

void Polyhedron::fix_zero(int var) {
  Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(num_vars);
  e[var] = 1.0;
  add_eq(e, 0.0);
}

bool Polyhedron::homogeneous() const {
  return (b_eq.size() == 0 || b_eq.cwiseAbs().maxCoeff() == 0.0) &&
         (b_in.size() == 0 || b_in.cwiseAbs().maxCoeff() == 0.0);
}

double Polyhedron::max_violation(const Eigen::VectorXd& z) const {
  double v = 0.0;
  if (num_eq()) v = std::max(v, (A_eq * z - b_eq).cwiseAbs().maxCoeff());
  if (num_ineq()) v = std::max(v, (A_in * z - b_in).maxCoeff());
  for (int j = 0; j < num_vars; ++j)
    if (nonneg[j]) v = std::max(v, -z[j]);
  return v;
}

const char* to_string(LPStatus s) {
  switch (s) {
    case LPStatus::optimal: return "optimal";
    case LPStatus::infeasible: return "infeasible";
    case LPStatus::unbounded: return "unbounded";
  }
  return "?";
}

namespace {

// min c^T z s.t. A z = b, z >= 0, built from a Polyhedron by splitting free
// variables and adding slacks.
struct StandardForm {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  Eigen::MatrixXd expand;  // original = expand * z
};

StandardForm standardize(const Polyhedron& P, const Eigen::VectorXd& c) {
  const int nv = P.num_vars;
  int split = 0;
  for (int j = 0; j < nv; ++j) split += P.nonneg[j] ? 1 : 2;
  const int rows = P.num_eq() + P.num_ineq();
  const int cols = split + P.num_ineq();

  StandardForm s;
  s.expand = Eigen::MatrixXd::Zero(nv, cols);
  int col = 0;
  for (int j = 0; j < nv; ++j) {
    s.expand(j, col++) = 1.0;
    if (!P.nonneg[j]) s.expand(j, col++) = -1.0;
  }
  Eigen::MatrixXd E = s.expand.leftCols(split);

  s.A = Eigen::MatrixXd::Zero(rows, cols);
  s.b.resize(rows);
  if (P.num_eq()) {
    s.A.topLeftCorner(P.num_eq(), split) = P.A_eq * E;
    s.b.head(P.num_eq()) = P.b_eq;
  }
  for (int i = 0; i < P.num_ineq(); ++i) {
    s.A.block(P.num_eq() + i, 0, 1, split) = P.A_in.row(i) * E;
    s.A(P.num_eq() + i, split + i) = 1.0;
    s.b[P.num_eq() + i] = P.b_in[i];
  }
  s.c = Eigen::VectorXd::Zero(cols);
  if (c.size()) s.c.head(split) = E.transpose() * c;
  return s;
}

enum class SimplexResult { optimal, unbounded };

// Dense tableau with Bland's rule. Rows 0..M-1 are constraints, row M holds
// reduced costs with -objective in the rhs column.
class Tableau {
 public:
  Tableau(const StandardForm& s) : M_(static_cast<int>(s.A.rows())), N_(static_cast<int>(s.A.cols())) {
    T_ = Eigen::MatrixXd::Zero(M_ + 1, N_ + M_ + 1);
    basis_.resize(M_);
    for (int i = 0; i < M_; ++i) {
      const double sign = s.b[i] < 0 ? -1.0 : 1.0;
      T_.block(i, 0, 1, N_) = sign * s.A.row(i);
      T_(i, N_ + i) = 1.0;
      T_(i, rhs()) = sign * s.b[i];
      basis_[i] = N_ + i;
    }
    rows_.resize(M_);
    for (int i = 0; i < M_; ++i) rows_[i] = i;
  }

  int rhs() const { return N_ + M_; }

  void set_phase1_objective() {
    T_.row(M_).setZero();
    for (int i = 0; i < M_; ++i) {
      T_.block(M_, 0, 1, N_) -= T_.block(i, 0, 1, N_);
      T_(M_, rhs()) -= T_(i, rhs());
    }
  }

  void set_objective(const Eigen::VectorXd& c) {
    T_.row(M_).setZero();
    T_.block(M_, 0, 1, N_) = c.transpose();
    for (int i = 0; i < M_; ++i) {
      const int j = basis_[i];
      const double cb = j < N_ ? c[j] : 0.0;
      if (cb != 0.0) T_.row(M_) -= cb * T_.row(i);
    }
  }

  double objective() const { return -T_(M_, rhs()); }

  SimplexResult run(bool allow_artificial, int& iterations, int& entering_on_unbounded) {
    const int limit = 20000 + 100 * (M_ + N_);
    const int ncols = allow_artificial ? N_ + M_ : N_;
    for (;;) {
      if (++iterations > limit) throw NumericError("simplex iteration cap exceeded (cycling guard)");
      int enter = -1;
      for (int j = 0; j < ncols; ++j) {
        if (T_(M_, j) < -1e-10) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return SimplexResult::optimal;
      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < M_; ++i) {
        const double a = T_(i, enter);
        if (a <= tol::lp_pivot) continue;
        const double ratio = T_(i, rhs()) / a;
        if (leave < 0 || ratio < best - 1e-13) {
          best = ratio;
          leave = i;
        } else if (ratio <= best + 1e-13 && basis_[i] < basis_[leave]) {
          leave = i;
        }
      }
      if (leave < 0) {
        entering_on_unbounded = enter;
        return SimplexResult::unbounded;
      }
      pivot(leave, enter);
    }
  }

  void pivot(int r, int c) {
    T_.row(r) /= T_(r, c);
    for (int i = 0; i <= M_; ++i) {
      if (i == r) continue;
      const double f = T_(i, c);
      if (f != 0.0) T_.row(i) -= f * T_.row(r);
    }
    basis_[r] = c;
  }

  // Pivots artificial variables out of the basis; rows where that is
  // impossible are linearly dependent and are dropped.
  void remove_artificials() {
    std::vector<int> keep;
    for (int i = 0; i < M_; ++i) {
      if (basis_[i] < N_) {
        keep.push_back(i);
        continue;
      }
      int col = -1;
      double best = 1e-9;
      for (int j = 0; j < N_; ++j) {
        if (std::abs(T_(i, j)) > best) {
          best = std::abs(T_(i, j));
          col = j;
        }
      }
      if (col >= 0) {
        pivot(i, col);
        keep.push_back(i);
      }
    }
    if (static_cast<int>(keep.size()) == M_) return;
    Eigen::MatrixXd T(keep.size() + 1, T_.cols());
    std::vector<int> basis, rows;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      T.row(k) = T_.row(keep[k]);
      basis.push_back(basis_[keep[k]]);
      rows.push_back(rows_[keep[k]]);
    }
    T.row(keep.size()) = T_.row(M_);
    T_ = std::move(T);
    basis_ = std::move(basis);
    rows_ = std::move(rows);
    M_ = static_cast<int>(keep.size());
  }

  Eigen::VectorXd primal() const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(N_);
    for (int i = 0; i < M_; ++i)
      if (basis_[i] < N_) z[basis_[i]] = std::max(0.0, T_(i, rhs()));
    return z;
  }

  // Basic solution recomputed from the original data, which removes the
  // error accumulated by the tableau updates.
  Eigen::VectorXd refined_primal(const StandardForm& s) const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(N_);
    if (M_ == 0) return z;
    Eigen::MatrixXd B(M_, M_);
    Eigen::VectorXd b(M_);
    for (int i = 0; i < M_; ++i) {
      b[i] = s.b[rows_[i]];
      for (int k = 0; k < M_; ++k) B(i, k) = basis_[k] < N_ ? s.A(rows_[i], basis_[k]) : 0.0;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    if (!lu.isInvertible()) return primal();
    Eigen::VectorXd zb = lu.solve(b);
    for (int k = 0; k < M_; ++k)
      if (basis_[k] < N_) z[basis_[k]] = std::max(0.0, zb[k]);
    return z;
  }

  Eigen::VectorXd ray(int enter) const {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(N_);
    d[enter] = 1.0;
    for (int i = 0; i < M_; ++i)
      if (basis_[i] < N_) d[basis_[i]] = -T_(i, enter);
    return d;
  }

 private:
  int M_, N_;
  Eigen::MatrixXd T_;
  std::vector<int> basis_;
  std::vector<int> rows_;
};

double std_violation(const StandardForm& s, const Eigen::VectorXd& z) {
  if (s.A.rows() == 0) return 0.0;
  return (s.A * z - s.b).cwiseAbs().maxCoeff();
}

LPOutcome solve(const Eigen::VectorXd& c, const Polyhedron& P, bool has_objective) {
  if (c.size() && c.size() != P.num_vars) throw ValidationError("objective length differs from num_vars");
  const StandardForm s = standardize(P, c);
  Tableau t(s);
  LPOutcome out;

  int enter = -1;
  t.set_phase1_objective();
  t.run(true, out.iterations, enter);
  out.phase1_residual = std::max(0.0, t.objective());
  const double thr = tol::lp_feasibility;
  if (out.phase1_residual > thr) {
    out.status = LPStatus::infeasible;
    out.marginal = out.phase1_residual <= thr * tol::marginal_factor;
    return out;
  }
  out.marginal = out.phase1_residual > thr / tol::marginal_factor;
  t.remove_artificials();

  if (has_objective) {
    t.set_objective(s.c);
    if (t.run(false, out.iterations, enter) == SimplexResult::unbounded) {
      out.status = LPStatus::unbounded;
      out.witness = s.expand * t.primal();
      out.ray = s.expand * t.ray(enter);
      out.value = -std::numeric_limits<double>::infinity();
      return out;
    }
  }

  Eigen::VectorXd z = t.primal();
  Eigen::VectorXd zr = t.refined_primal(s);
  if (std_violation(s, zr) <= std_violation(s, z)) z = zr;
  out.status = LPStatus::optimal;
  out.witness = s.expand * z;
  out.value = c.size() ? c.dot(out.witness) : 0.0;

  const double viol = P.max_violation(out.witness);
  if (viol > thr) {
    if (viol > thr * tol::marginal_factor)
      throw NumericError(fmt::format("LP witness fails re-verification (violation {:.3g})", viol));
    out.marginal = true;
  }
  return out;
}

}  // namespace

LPOutcome lp_feasible(const Polyhedron& P) { return solve(Eigen::VectorXd(), P, false); }

LPOutcome lp_optimize(const Eigen::VectorXd& c, const Polyhedron& P, Sense sense) {
  if (sense == Sense::minimize) return solve(c, P, true);
  LPOutcome out = solve(-c, P, true);
  out.value = -out.value;
  return out;
}

ConeTest cone_only_zero(const Polyhedron& P, const std::vector<int>& coords) {
  if (!P.homogeneous()) throw ValidationError("cone_only_zero needs a homogeneous system");
  const int nv = P.num_vars;
  int split = 0;
  for (int j = 0; j < nv; ++j) split += P.nonneg[j] ? 1 : 2;
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(nv, split);
  for (int j = 0, col = 0; j < nv; ++j) {
    E(j, col++) = 1.0;
    if (!P.nonneg[j]) E(j, col++) = -1.0;
  }

  Polyhedron Q(split, true);
  for (int i = 0; i < P.num_eq(); ++i) Q.add_eq(P.A_eq.row(i) * E, 0.0);
  for (int i = 0; i < P.num_ineq(); ++i) Q.add_ineq(P.A_in.row(i) * E, 0.0);
  Q.add_ineq(Eigen::RowVectorXd::Ones(split), 1.0);

  std::vector<int> targets = coords;
  if (targets.empty())
    for (int j = 0; j < nv; ++j) targets.push_back(j);

  ConeTest out;
  const double thr = tol::lp_feasibility;
  auto consider = [&](const Eigen::VectorXd& c) {
    LPOutcome r = lp_optimize(E.transpose() * c, Q, Sense::maximize);
    if (r.status != LPStatus::optimal) throw NumericError("normalized cone LP did not reach an optimum");
    if (r.value > thr / tol::marginal_factor && r.value <= thr * tol::marginal_factor) out.marginal = true;
    if (r.marginal) out.marginal = true;
    if (r.value <= thr) return;
    Eigen::VectorXd w = E * r.witness;
    const double norm = w.lpNorm<1>();
    if (norm <= 0) return;
    w /= norm;
    bool fresh = true;
    for (const auto& e : out.extreme_witnesses)
      if ((e - w).lpNorm<Eigen::Infinity>() <= tol::vertex_dedup) fresh = false;
    if (fresh) out.extreme_witnesses.push_back(w);
    if (out.only_zero || r.value > out.max_value) {
      out.witness = w;
      out.max_value = r.value;
    }
    out.only_zero = false;
  };
  for (int j : targets) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(nv);
    c[j] = 1.0;
    consider(c);
    if (!P.nonneg[j]) consider(-c);
  }
  return out;
}

namespace {

using Binom = std::vector<std::vector<std::uint64_t>>;

Binom binomials(int n) {
  Binom C(n + 1, std::vector<std::uint64_t>(n + 1, 0));
  for (int i = 0; i <= n; ++i) {
    C[i][0] = 1;
    for (int k = 1; k <= i; ++k) {
      const std::uint64_t a = C[i - 1][k - 1], b = k <= i - 1 ? C[i - 1][k] : 0;
      C[i][k] = (a + b < a) ? std::numeric_limits<std::uint64_t>::max() : a + b;
    }
  }
  return C;
}

// The r-th k-subset of {0..n-1} in lexicographic order.
void unrank(std::uint64_t r, int n, int k, const Binom& C, std::vector<int>& out) {
  out.resize(k);
  int next = 0;
  for (int i = 0; i < k; ++i) {
    for (int c = next; c < n; ++c) {
      const std::uint64_t count = C[n - c - 1][k - i - 1];
      if (r < count) {
        out[i] = c;
        next = c + 1;
        break;
      }
      r -= count;
    }
  }
}

struct VertexProblem {
  const Polyhedron& P;
  Eigen::MatrixXd cand_A;  // inequality rows and sign bounds, as rows <= rhs
  Eigen::VectorXd cand_b;
  int k = 0;
};

bool try_subset(const VertexProblem& vp, const std::vector<int>& subset, Eigen::VectorXd& z) {
  const Polyhedron& P = vp.P;
  const int nv = P.num_vars;
  const int rows = P.num_eq() + vp.k;
  Eigen::MatrixXd S(rows, nv);
  Eigen::VectorXd rhs(rows);
  if (P.num_eq()) {
    S.topRows(P.num_eq()) = P.A_eq;
    rhs.head(P.num_eq()) = P.b_eq;
  }
  for (int i = 0; i < vp.k; ++i) {
    S.row(P.num_eq() + i) = vp.cand_A.row(subset[i]);
    rhs[P.num_eq() + i] = vp.cand_b[subset[i]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(S);
  qr.setThreshold(1e-10);
  if (qr.rank() < nv) return false;
  z = qr.solve(rhs);
  if ((S * z - rhs).cwiseAbs().maxCoeff() > tol::lp_feasibility * std::max(1.0, rhs.cwiseAbs().maxCoeff()))
    return false;
  return P.max_violation(z) <= tol::lp_feasibility;
}

}  // namespace

std::vector<Eigen::VectorXd> vertices(const Polyhedron& P, Exec exec) {
  const int nv = P.num_vars;
  if (nv > max_vertex_vars)
    throw ValidationError(fmt::format("vertex enumeration limited to {} variables, got {}", max_vertex_vars, nv));
  if (nv == 0) return {Eigen::VectorXd(0)};

  int bounds = 0;
  for (int j = 0; j < nv; ++j) bounds += P.nonneg[j] ? 1 : 0;
  const int cand = P.num_ineq() + bounds;
  VertexProblem vp{P, Eigen::MatrixXd::Zero(cand, nv), Eigen::VectorXd::Zero(cand)};
  if (P.num_ineq()) {
    vp.cand_A.topRows(P.num_ineq()) = P.A_in;
    vp.cand_b.head(P.num_ineq()) = P.b_in;
  }
  for (int j = 0, r = P.num_ineq(); j < nv; ++j)
    if (P.nonneg[j]) vp.cand_A(r++, j) = -1.0;

  int rank_eq = 0;
  if (P.num_eq()) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(P.A_eq);
    lu.setThreshold(1e-10);
    rank_eq = static_cast<int>(lu.rank());
  }
  vp.k = nv - rank_eq;
  if (vp.k > cand) return {};

  const Binom C = binomials(cand);
  const std::uint64_t total = C[cand][vp.k];
  if (total > 50'000'000ULL) throw ValidationError("vertex enumeration: too many constraint subsets");

  std::vector<Eigen::VectorXd> found;
  if (exec == Exec::serial) {
    std::vector<int> subset;
    Eigen::VectorXd z;
    for (std::uint64_t r = 0; r < total; ++r) {
      unrank(r, cand, vp.k, C, subset);
      if (try_subset(vp, subset, z)) found.push_back(z);
    }
  } else {
    const auto count = static_cast<std::int64_t>(total);
#pragma omp parallel
    {
      std::vector<Eigen::VectorXd> local;
      std::vector<int> subset;
      Eigen::VectorXd z;
#pragma omp for schedule(static) nowait
      for (std::int64_t r = 0; r < count; ++r) {
        unrank(static_cast<std::uint64_t>(r), cand, vp.k, C, subset);
        if (try_subset(vp, subset, z)) local.push_back(z);
      }
#pragma omp critical(bec_vertices_merge)
      found.insert(found.end(), local.begin(), local.end());
    }
  }

  auto lex_less = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i)
      if (a[i] != b[i]) return a[i] < b[i];
    return false;
  };
  std::sort(found.begin(), found.end(), lex_less);
  std::vector<Eigen::VectorXd> unique;
  for (const auto& z : found) {
    bool dup = false;
    for (const auto& u : unique)
      if ((u - z).lpNorm<Eigen::Infinity>() <= tol::vertex_dedup) {
        dup = true;
        break;
      }
    if (!dup) unique.push_back(z);
  }
  return unique;
}

}  // namespace bec

#include "bec/cq.hpp"

#include <fmt/format.h>

#include "bec/error.hpp"
#include "bec/lpcore.hpp"

namespace bec {

const char* to_string(CQCheck c) {
  switch (c) {
    case CQCheck::mfcq: return "MFCQ";
    case CQCheck::foscms_direction: return "FOSCMS-direction";
    case CQCheck::quasi_normality_direction: return "quasi-normality-direction";
  }
  return "?";
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::holds: return "holds";
    case Verdict::fails: return "fails";
    case Verdict::certificate_modulo_sampling: return "certificate-modulo-sampling";
    case Verdict::unchecked_hypothesis: return "unchecked-hypothesis";
  }
  return "?";
}

Eigen::MatrixXd constraint_jacobian(const std::vector<Expr>& constraints, const EvalPoint& p) {
  const auto dim = p.x.size() + p.y.size();
  Eigen::MatrixXd J(static_cast<Eigen::Index>(constraints.size()), dim);
  for (std::size_t i = 0; i < constraints.size(); ++i) J.row(static_cast<Eigen::Index>(i)) = gradient(constraints[i], p);
  return J;
}

namespace {

// {lambda >= 0 : M^T lambda = 0, lambda_i = 0 off the active set}.
Polyhedron abnormal_cone(const Eigen::MatrixXd& M, const ActiveSet& active) {
  const int p = static_cast<int>(M.rows());
  Polyhedron P(p);
  for (Eigen::Index j = 0; j < M.cols(); ++j) P.add_eq(M.col(j).transpose(), 0.0);
  for (int i = 0; i < p; ++i)
    if (!active.contains(i)) P.fix_zero(i);
  return P;
}

CQReport mfcq_from(const Eigen::MatrixXd& M, const ActiveSet& active, const char* system) {
  CQReport r;
  r.check = CQCheck::mfcq;
  if (active.indices.empty()) {
    r.detail = fmt::format("{}: no active constraints", system);
    return r;
  }
  ConeTest c = cone_only_zero(abnormal_cone(M, active));
  r.marginal = c.marginal;
  if (c.only_zero) {
    r.detail = fmt::format("{}: only the zero abnormal multiplier", system);
  } else {
    r.verdict = Verdict::fails;
    r.lp_witnesses = c.extreme_witnesses;
    r.detail = fmt::format("{}: nonzero abnormal multiplier", system);
  }
  return r;
}

}  // namespace

CQReport check_mfcq(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const EvalPoint p{x, y};
  const ActiveSet active = active_set(prob.g, p, tol::active);
  const Eigen::MatrixXd J = constraint_jacobian(prob.g, p);
  return mfcq_from(J.rightCols(prob.m), active, "g(x,.) <= 0");
}

CQReport check_joint_mfcq(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const EvalPoint p{x, y};
  const ActiveSet active = active_set(prob.g, p, tol::active);
  return mfcq_from(constraint_jacobian(prob.g, p), active, "g(x,y) <= 0");
}

CQReport check_foscms_direction(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& u) {
  if (u.size() != prob.n) throw ValidationError("direction u must have length n");
  const EvalPoint p{x, w};
  const ActiveSet active = active_set(prob.g, p, tol::active);
  const Eigen::MatrixXd J = constraint_jacobian(prob.g, p);
  const Eigen::MatrixXd B = J.rightCols(prob.m);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(prob.p());
  for (int i : active.indices) a[i] = J.row(i).head(prob.n).dot(u);

  CQReport r;
  r.check = CQCheck::foscms_direction;
  if (a.lpNorm<Eigen::Infinity>() <= 1e-12) {
    r.verdict = Verdict::unchecked_hypothesis;
    r.detail = "grad_x g(x,w) u = 0 on the active set";
    return r;
  }

  for (double sign : {1.0, -1.0}) {
    Polyhedron L(prob.m, false);
    for (int i : active.indices) L.add_ineq(B.row(i), -sign * a[i]);
    if (lp_feasible(L).status != LPStatus::optimal) {
      r.verdict = Verdict::fails;
      r.detail = fmt::format("L(x,w;{}u) is empty", sign > 0 ? "" : "-");
      return r;
    }
  }

  // With grad_y g^T lambda = 0 the product lambda^T grad g (alpha u, v) equals
  // alpha lambda^T a, so directions with alpha != 0 reduce to the row a^T lambda = 0.
  Polyhedron K = abnormal_cone(B, active);
  Polyhedron Ka = K;
  Ka.add_eq(a.transpose(), 0.0);
  ConeTest ca = cone_only_zero(Ka);
  r.marginal = ca.marginal;
  if (!ca.only_zero) {
    r.verdict = Verdict::fails;
    r.lp_witnesses = ca.extreme_witnesses;
    r.detail = "abnormal multiplier orthogonal to grad g (alpha u, v) with alpha != 0";
    return r;
  }
  ConeTest ck = cone_only_zero(K);
  if (!ck.only_zero) {
    Polyhedron V(prob.m, false);
    for (int i : active.indices) V.add_ineq(B.row(i), 0.0);
    ConeTest cv = cone_only_zero(V);
    if (!cv.only_zero) {
      r.verdict = Verdict::fails;
      r.lp_witnesses = ck.extreme_witnesses;
      r.lp_witnesses.push_back(cv.witness);
      r.detail = "abnormal multiplier in direction grad_y g v with v != 0 in L(x,w;0)";
      return r;
    }
  }
  r.detail = "FOSCMS holds in all directions grad g (alpha u, v)";
  return r;
}

bool mscq_sufficient(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                     std::string* why) {
  bool affine = true;
  for (const auto& gi : prob.g) affine = affine && gi.is_affine();
  if (affine) {
    if (why) *why = "lower constraints affine";
    return true;
  }
  if (check_joint_mfcq(prob, x, w).verdict == Verdict::holds) {
    if (why) *why = "joint MFCQ";
    return true;
  }
  return false;
}

}  // namespace bec

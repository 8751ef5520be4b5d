#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "bec/model.hpp"

namespace bec {

enum class CQCheck { mfcq, foscms_direction, quasi_normality_direction };
enum class Verdict { holds, fails, certificate_modulo_sampling, unchecked_hypothesis };

const char* to_string(CQCheck c);
const char* to_string(Verdict v);

struct SampleEvidence {
  double t = 0.0;
  Eigen::VectorXd direction;   // perturbed (u, v)
  std::vector<double> values;  // the sign-tested quantities at the probe point
};

struct CQReport {
  CQCheck check = CQCheck::mfcq;
  Verdict verdict = Verdict::holds;
  std::vector<Eigen::VectorXd> lp_witnesses;
  std::vector<SampleEvidence> sampling_evidence;
  std::string detail;
  bool marginal = false;
};

/// Joint Jacobian of a constraint list at p, one row of length n+m per constraint.
Eigen::MatrixXd constraint_jacobian(const std::vector<Expr>& constraints, const EvalPoint& p);

/// MFCQ for g(x, .) <= 0 at y: no nonzero lambda >= 0 on the active set with grad_y g^T lambda = 0.
CQReport check_mfcq(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// MFCQ for the joint system g(x, y) <= 0 at (x, y), using full gradients.
CQReport check_joint_mfcq(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// FOSCMS variant for g(x, .) <= 0 at w in the x-direction u: grad_x g u != 0 on
/// the active rows, L(x,w;alpha u) nonempty for alpha = +-1, and FOSCMS at w in
/// every direction grad g (alpha u, v) with (alpha, v) != 0, v in L(x,w;alpha u).
/// Reports unchecked-hypothesis when grad_x g u = 0.
CQReport check_foscms_direction(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& u);

/// Sufficient conditions for MSCQ (hence Guignard CQ) of g(x, w) <= 0 at (x, w):
/// all lower constraints affine, or joint MFCQ. `why` names the one that applied.
bool mscq_sufficient(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                     std::string* why = nullptr);

}  // namespace bec

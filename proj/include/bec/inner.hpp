#pragma once

#include <Eigen/Dense>

#include "bec/lpcore.hpp"
#include "bec/model.hpp"

namespace bec {

struct InnerOptions {
  double kkt_tol = tol::inner_kkt;
  double feas_tol = tol::inner_kkt;
  int max_outer = 200;
  int max_inner = 500;
  // Re-solve from y - gamma * grad_w f and require agreement of the minimizers.
  bool cross_check = true;

  static InnerOptions probe() {
    InnerOptions o;
    o.kkt_tol = tol::inner_probe;
    o.feas_tol = tol::inner_probe;
    return o;
  }
};

/// Solution of min_w f(x,w) + |w - y|^2 / (2 gamma) s.t. g(x,w) <= 0.
struct InnerSolution {
  Eigen::VectorXd w;       // S_gamma(x, y)
  double value = 0.0;      // v_gamma(x, y)
  Eigen::VectorXd lambda;  // length p
  double kkt_residual = 0.0;
  double feasibility = 0.0;  // max(0, max_i g_i(x, w))
  ActiveSet active;
  int iterations = 0;
  bool multiplier_set_empty = false;
};

InnerSolution solve_inner(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const InnerOptions& opts = {});

/// Lambda(x, y, w): multipliers of the inner problem at w.
Polyhedron inner_multiplier_polyhedron(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                       double active_tol = tol::active);

// Gradient of w -> f(x,w) + |w-y|^2/(2 gamma) and the Jacobian of g(x, .), rows per constraint.
Eigen::VectorXd inner_objective_gradient(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& y, const Eigen::VectorXd& w);
Eigen::MatrixXd lower_constraint_jacobian_y(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                            const Eigen::VectorXd& w);

}  // namespace bec

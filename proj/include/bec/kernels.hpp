#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "bec/exec.hpp"
#include "bec/inner.hpp"

namespace bec {

struct EnvelopeSample {
  bool ok = false;
  double value = 0.0;
  Eigen::VectorXd w;
  std::string error;  // set when !ok
};

/// v_gamma and S_gamma at many points. Failures are captured per point.
std::vector<EnvelopeSample> envelope_batch(const BilevelProblem& prob, const std::vector<EvalPoint>& points,
                                           const InnerOptions& opts = {}, Exec exec = Exec::parallel);

struct GridResult {
  double value = 0.0;                     // +inf when no grid point is feasible
  std::vector<Eigen::VectorXd> argmins;   // one representative per cluster of near-minimizers
  long long feasible_points = 0;
  double step = 0.0;
};

struct GridSpecW {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  double step = 1e-3;
  double feasibility_tol = 1e-12;
  double argmin_tol = 1e-9;  // points within this of the minimum count as minimizers
};

/// Brute-force min over a w-grid of f(x,w) + |w-y|^2/(2 gamma) subject to
/// g(x,w) <= feasibility_tol. With no `y` the proximal term is dropped, giving
/// the lower-level value function.
GridResult grid_minimize(const BilevelProblem& prob, const Eigen::VectorXd& x, const std::optional<Eigen::VectorXd>& y,
                         const GridSpecW& grid, Exec exec = Exec::parallel);

struct MidpointReport {
  int pairs = 0;
  int evaluated = 0;  // pairs where all three envelope values were available
  int violations = 0;
  double worst_excess = 0.0;  // largest v(mid) - bound
  double rho_v = 0.0;
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> violating;  // first few, as (x,y) stacked
};

/// Midpoint test of rho_v-weak convexity of v_gamma on a box in (x, y):
/// v(mid) <= (v(z1) + v(z2)) / 2 + rho_v / 8 |z1 - z2|^2 for random pairs.
MidpointReport midpoint_check(const BilevelProblem& prob, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                              int pairs, double rho_v, unsigned long long seed, Exec exec = Exec::parallel,
                              double slack = 1e-10);

}  // namespace bec

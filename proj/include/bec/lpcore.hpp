#pragma once

#include <Eigen/Dense>
#include <vector>

#include "bec/exec.hpp"
#include "bec/tolerances.hpp"

namespace bec {

/// {z : A_eq z = b_eq, A_in z <= b_in, z_i >= 0 where nonneg[i]}.
struct Polyhedron {
  int num_vars = 0;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  std::vector<bool> nonneg;

  Polyhedron() = default;
  explicit Polyhedron(int vars, bool all_nonneg = true);

  void add_eq(const Eigen::RowVectorXd& row, double rhs);
  void add_ineq(const Eigen::RowVectorXd& row, double rhs);
  void fix_zero(int var);

  int num_eq() const { return static_cast<int>(A_eq.rows()); }
  int num_ineq() const { return static_cast<int>(A_in.rows()); }
  bool homogeneous() const;

  // Largest violation over all rows and sign constraints (0 when feasible).
  double max_violation(const Eigen::VectorXd& z) const;
  bool contains(const Eigen::VectorXd& z, double tolerance = tol::lp_feasibility) const {
    return max_violation(z) <= tolerance;
  }
};

enum class LPStatus { optimal, infeasible, unbounded };
enum class Sense { minimize, maximize };

const char* to_string(LPStatus s);

struct LPOutcome {
  LPStatus status = LPStatus::infeasible;
  double value = 0.0;
  Eigen::VectorXd witness;  // feasible point (optimal) or last feasible vertex (unbounded)
  Eigen::VectorXd ray;      // recession direction improving the objective (unbounded)
  double phase1_residual = 0.0;
  bool marginal = false;  // decision within marginal_factor * tolerance of the threshold
  int iterations = 0;
};

LPOutcome lp_feasible(const Polyhedron& P);
LPOutcome lp_optimize(const Eigen::VectorXd& c, const Polyhedron& P, Sense sense);

struct ConeTest {
  bool only_zero = true;
  Eigen::VectorXd witness;  // unit 1-norm nonzero element when !only_zero
  std::vector<Eigen::VectorXd> extreme_witnesses;
  double max_value = 0.0;
  bool marginal = false;
};

/// Decides whether the homogeneous cone P is {0} on the coordinates `coords`
/// (all coordinates when empty), by maximizing each coordinate (and its
/// negation for unsigned ones) over P intersected with a 1-norm ball.
ConeTest cone_only_zero(const Polyhedron& P, const std::vector<int>& coords = {});

inline constexpr int max_vertex_vars = 12;

/// All basic feasible solutions of P, deduplicated and sorted lexicographically.
std::vector<Eigen::VectorXd> vertices(const Polyhedron& P, Exec exec = Exec::serial);

}  // namespace bec

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bec/expr.hpp"
#include "bec/tolerances.hpp"

namespace bec {

enum class FConvexity { jointly_weakly_convex, y_weakly_convex, none };
enum class GConvexity { jointly_quasiconvex, y_quasiconvex, none };

std::string to_string(FConvexity c);
std::string to_string(GConvexity c);

/// min F(x,y) s.t. G(x,y) <= 0, y solves min_y f(x,y) s.t. g(x,y) <= 0,
/// together with the envelope parameter gamma and the weak-convexity modulus of f.
struct BilevelProblem {
  int n = 0;
  int m = 0;
  Expr F;
  std::vector<Expr> G;
  Expr f;
  std::vector<Expr> g;
  double gamma = 0.0;
  double rho_f = 0.0;  // modulus in y
  // Modulus of f in (x, y) jointly; defaults to rho_f when not declared.
  std::optional<double> rho_f_joint;
  FConvexity f_convexity = FConvexity::none;
  GConvexity g_convexity = GConvexity::none;

  int p() const { return static_cast<int>(g.size()); }
  int q() const { return static_cast<int>(G.size()); }
  double joint_modulus() const { return rho_f_joint.value_or(rho_f); }

  // Copy with a different gamma. Only gamma * rho_f < 1 is required here, which
  // keeps the inner problem strongly convex; load_problem is stricter.
  BilevelProblem with_gamma(double new_gamma) const;
};

BilevelProblem load_problem(const std::string& text);
BilevelProblem load_problem_file(const std::string& path);
std::string save_problem(const BilevelProblem& prob);

struct GridSpec {
  double lo = -2.0;
  double hi = 2.0;
  int points = 100;  // total sample count over the (x, y) box
};

struct ValidationReport {
  bool gamma_ok = true;
  std::string gamma_message;
  bool rho_f_consistent = true;
  double min_eig_yy = 0.0;  // smallest eigenvalue of hess_yy f over the grid
  bool rho_joint_consistent = true;
  double min_eig_joint = 0.0;
  bool dimensions_ok = true;
  std::vector<std::string> messages;

  bool ok() const { return gamma_ok && rho_f_consistent && rho_joint_consistent && dimensions_ok; }
};

ValidationReport validate(const BilevelProblem& prob, const GridSpec& grid = {});

struct ActiveSet {
  std::vector<int> indices;  // 0-based, sorted
  double tolerance = tol::active;

  bool contains(int i) const;
};

ActiveSet active_set(const std::vector<Expr>& constraints, const EvalPoint& p, double tolerance = tol::active);

}  // namespace bec

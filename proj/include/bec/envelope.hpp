#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "bec/cq.hpp"
#include "bec/inner.hpp"
#include "bec/kernels.hpp"

namespace bec {

struct Direction {
  Eigen::VectorXd u;  // length n
  Eigen::VectorXd v;  // length m

  Eigen::VectorXd stacked() const;
  bool is_zero() const;
  Direction scaled(double t) const { return {t * u, t * v}; }
};

Direction make_direction(const BilevelProblem& prob, const Eigen::VectorXd& stacked);

enum class Regime { weakly_convex, dini, rcr };
const char* to_string(Regime r);

// Hypotheses the caller asserts. Anything not asserted must be machine-checked.
struct Assumptions {
  bool guignard = false;
  bool mscq = false;
  bool rs = false;          // directional Robinson stability of F
  bool rcr = false;         // RCR regularity of F
  bool inner_calm = false;  // directional inner calmness* of S_gamma
};

enum class EstimateKind { exact_formula, bounds, finite_difference };
enum class EstimateRegime { weakly_convex, dini, rcr, oracle };
const char* to_string(EstimateKind k);
const char* to_string(EstimateRegime r);

struct DerivativeEstimate {
  EstimateKind kind = EstimateKind::exact_formula;
  EstimateRegime regime = EstimateRegime::oracle;
  double lower = 0.0;
  double upper = 0.0;
  double estimate = 0.0;                  // Richardson value for finite differences
  std::vector<Eigen::VectorXd> witnesses;  // multipliers attaining lower / upper
  std::vector<double> quotients;          // finite-difference quotients per step
  Eigen::VectorXd w;
  std::vector<CQReport> preconditions;
  std::string note;
};

enum class SubdiffSource { guignard, union_upper, rcr_upper };
const char* to_string(SubdiffSource s);

struct SubdiffEstimate {
  SubdiffSource source = SubdiffSource::guignard;
  std::vector<Eigen::VectorXd> points;       // (grad_x f + grad_x g^T lambda, (y - w)/gamma)
  std::vector<Eigen::VectorXd> multipliers;  // lambda behind each point
  std::vector<Eigen::VectorXd> directions;   // d used for each point (empty for the Guignard case)
  bool is_convex_hull = true;                // false for a union of hulls, one per direction
  bool exact = false;                        // equality rather than an upper estimate
  Eigen::VectorXd w;
  std::string note;
};

/// grad_y v_gamma(x, y) = (y - w) / gamma.
Eigen::VectorXd grad_y_envelope(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Directional derivative of v_gamma under the chosen regime. Refuses with
/// RegimeError when the regime's hypotheses are neither asserted nor verified.
DerivativeEstimate dir_derivative(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                  const Direction& d, Regime regime, const Assumptions& assume = {});

inline const std::vector<double> default_fd_steps{1e-2, 1e-3, 1e-4, 1e-5};

/// One-sided difference quotients of v_gamma along d.
DerivativeEstimate fd_dir_derivative(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                     const Direction& d, const std::vector<double>& steps = default_fd_steps,
                                     Exec exec = Exec::parallel);

inline constexpr int max_critical_directions = 32;

/// Directional subdifferential estimate. Guignard gives the exact union over
/// Lambda(x,y,w;u,v); union_upper the union of W(x,y,w;u,d) over critical d;
/// rcr_upper the set W(x,y,w;u,d) common to the enumerated critical d.
SubdiffEstimate subdiff_estimate(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                 const Direction& d, SubdiffSource source, const Assumptions& assume = {},
                                 const std::vector<Eigen::VectorXd>& critical = {});

struct WeakConvexityReport {
  MidpointReport midpoint;
  double rho_joint = 0.0;
  double rho_v = 0.0;
};

/// Midpoint test of weak convexity of v_gamma on the box [lo, hi] in (x, y).
/// The modulus defaults to rho/(1 - gamma rho) + 1e-9 with rho the joint modulus of f.
WeakConvexityReport weak_convexity_check(const BilevelProblem& prob, const Eigen::VectorXd& lo,
                                         const Eigen::VectorXd& hi, int samples, unsigned long long seed = 1,
                                         std::optional<double> rho_v = std::nullopt, Exec exec = Exec::parallel);

}  // namespace bec

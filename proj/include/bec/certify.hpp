#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "bec/cq.hpp"
#include "bec/envelope.hpp"

namespace bec {

/// Lambda(x,y) and, with a direction, Lambda(x,y;u,v).
struct MultiplierSet {
  Polyhedron base;
  std::optional<Polyhedron> directional;
  ActiveSet active;

  const Polyhedron& effective() const { return directional ? *directional : base; }
};

MultiplierSet lower_multiplier_set(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                   const std::optional<Direction>& d = std::nullopt);

/// Regime used when the caller does not choose one: weakly-convex under joint
/// flags, dini otherwise.
Regime default_regime(const BilevelProblem& prob);

/// Throws InfeasiblePointError unless g, G <= tol and f - v_gamma <= tol at (x, y).
void require_vp_feasible(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct ConeRow {
  std::string name;
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool ok = true;
};

struct CriticalConeReport {
  bool inside = true;
  std::vector<ConeRow> rows;
  std::optional<DerivativeEstimate> derivative;  // envelope bounds along the normalized direction
};

CriticalConeReport in_critical_cone(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                    const Direction& d, Regime regime, const Assumptions& assume = {});

struct SamplingPlan {
  std::vector<double> t{1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  int directions = 16;
  double half_angle = 0.1;
  unsigned long long seed = 1;
};

// (i) MFCQ/FOSCMS with the union estimate, (ii) weak convexity with Lambda(x,y;u,v),
// (iii) RCR + RS with the common W(x,y,y;u,d).
enum class QNVariant { i, ii, iii };
const char* to_string(QNVariant v);

CQReport check_quasi_normality(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                               const Direction& d, QNVariant variant = QNVariant::ii, const Assumptions& assume = {},
                               const SamplingPlan& plan = {});

enum class StationaritySystem { skkt, wckkt };
const char* to_string(StationaritySystem s);

struct SMultipliers {
  Eigen::VectorXd mu_G;       // q
  Eigen::VectorXd mu_g;       // p
  Eigen::VectorXd mu_e;       // m
  Eigen::VectorXd mu_lambda;  // p
};

struct StationarityCertificate {
  StationaritySystem system = StationaritySystem::skkt;
  double alpha = 0.0;
  Eigen::VectorXd lambda_g;
  Eigen::VectorXd lambda_G;
  Eigen::VectorXd lambda_bar;
  Direction direction;
  double residual = 0.0;
  std::string branch;  // general, alpha=1 or alpha=0
  SMultipliers induced;
};

/// Searches the certificate LP. Returns nullopt when no certificate exists.
std::optional<StationarityCertificate> verify_stationarity(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                                           const Eigen::VectorXd& y,
                                                           const std::optional<Direction>& d,
                                                           StationaritySystem system,
                                                           std::optional<Regime> regime = std::nullopt,
                                                           const Assumptions& assume = {});

/// Largest violation of the defining rows of a certificate (recomputed from scratch).
double certificate_violation(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                             const StationarityCertificate& c);

struct SStationarityReport {
  bool stationary = false;
  SMultipliers mu;
  double residual = 0.0;
  std::vector<int> I0;
  bool marginal = false;
};

/// LP feasibility of the S-stationarity system for the triple (x, y, lambda_bar).
SStationarityReport verify_s_stationarity(const BilevelProblem& prob, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& y, const Eigen::VectorXd& lambda_bar);

/// Largest violation of the S-stationarity rows and sign rules by given multipliers.
double s_system_violation(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& lambda_bar, const SMultipliers& mu);

struct MpccComparison {
  std::optional<StationarityCertificate> certificate;
  double induced_violation = 0.0;
  bool induced_valid = false;
  std::optional<SStationarityReport> s_report;  // LP on the certificate's lambda_bar
  std::vector<std::string> directional_rows;     // rows the directional system adds
  bool gap = false;                              // no certificate, yet S-stationary for some lambda_bar
  std::vector<Eigen::VectorXd> gap_multipliers;
  bool degenerate = false;  // q = 0 and no active lower constraint
};

MpccComparison compare_with_mpcc(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                 const std::optional<Direction>& d, std::optional<Regime> regime = std::nullopt,
                                 const Assumptions& assume = {});

}  // namespace bec

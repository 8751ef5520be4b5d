#pragma once

// Every tolerance a certification claim depends on.
namespace bec::tol {

inline constexpr double lp_feasibility = 1e-9;
inline constexpr double lp_pivot = 1e-11;
inline constexpr double vertex_dedup = 1e-7;
inline constexpr double active = 1e-8;
inline constexpr double certificate = 1e-8;
inline constexpr double inner_kkt = 1e-10;
inline constexpr double inner_probe = 1e-12;
inline constexpr double inner_uniqueness = 1e-6;
// LP values within this factor of the decision threshold are reported as marginal.
inline constexpr double marginal_factor = 10.0;

}  // namespace bec::tol

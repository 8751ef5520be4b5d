#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "bec/certify.hpp"
#include "bec/envelope.hpp"
#include "bec/error.hpp"
#include "bec/example1.hpp"
#include "bec/inner.hpp"
#include "bec/kernels.hpp"
#include "bec/lpcore.hpp"
#include "bec/model.hpp"
#include "support.hpp"

using namespace bec;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double max_g(const BilevelProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& g : prob.g) worst = std::max(worst, eval(g, {x, y}));
  return worst;
}

double gamma_cap(const BilevelProblem& prob) { return prob.rho_f > 0 ? 0.9 / prob.rho_f : 1.0; }

Outcome worked_example() {
  const auto start = std::chrono::steady_clock::now();
  const Example1Result r = run_example1();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  int passed = 0;
  std::string failed;
  for (std::size_t i = 0; i < r.checks.size(); ++i) {
    passed += r.checks[i].pass;
    if (!r.checks[i].pass) failed += fmt::format(" [{}: {}]", i + 1, r.checks[i].detail);
  }
  return {r.passed() && seconds < 10.0,
          fmt::format("{}/{} checks, {:.2f} s{}", passed, r.checks.size(), seconds, failed)};
}

Outcome moreau_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> ug(1e-3, 1.0 - 1e-3);
  double worst_v = 0.0, worst_s = 0.0;
  int samples = 0;
  for (int m = 1; m <= 3; ++m) {
    std::string f;
    for (int j = 1; j <= m; ++j) f += fmt::format("{}y{}^2", j > 1 ? " + " : "", j);
    const BilevelProblem base = load_problem(fmt::format(
        "[problem]\nn = 1\nm = {}\ngamma = 0.5\nrho_f = 0\n\n[upper]\nobjective = \"0\"\n\n[lower]\n"
        "objective = \"0.5*({})\"\nconstraints =\n",
        m, f));
    for (int k = 0; k < 100; ++k) {
      const double gamma = ug(rng);
      const BilevelProblem prob = base.with_gamma(gamma);
      const Eigen::VectorXd x = test::uniform(rng, 1, -1, 1), y = test::uniform(rng, m, -3, 3);
      const InnerSolution s = solve_inner(prob, x, y);
      worst_v = std::max(worst_v, std::abs(s.value - y.squaredNorm() / (2 * (1 + gamma))));
      worst_s = std::max(worst_s, (s.w - y / (1 + gamma)).lpNorm<Eigen::Infinity>());
      ++samples;
    }
  }
  return {worst_v <= 1e-8 && worst_s <= 1e-8,
          fmt::format("{} samples, max |v error| {:.2e}, max |S error| {:.2e}", samples, worst_v, worst_s)};
}

Outcome envelope_inequalities() {
  std::mt19937_64 rng(103);
  bool pass = true;
  std::string detail;
  for (const char* name : {"band.blp", "kink.blp", "disk.blp"}) {
    const BilevelProblem prob = test::fixture(name);
    const double cap = gamma_cap(prob);
    int feasible = 0, upper_bad = 0, mono_bad = 0, grid_bad = 0;
    double worst_grid = 0.0;
    for (int k = 0; k < 200; ++k) {
      const Eigen::VectorXd x = test::uniform(rng, prob.n, -1, 1), y = test::uniform(rng, prob.m, -2, 2);
      const InnerSolution s = solve_inner(prob, x, y);
      if (max_g(prob, x, y) <= 0) {
        ++feasible;
        if (s.value > eval(prob.f, {x, y}) + 1e-10) ++upper_bad;
      }
      std::uniform_real_distribution<double> u1(0.02, cap);
      const double g1 = u1(rng);
      const double g2 = std::uniform_real_distribution<double>(g1, cap)(rng);
      const double v1 = solve_inner(prob.with_gamma(g1), x, y).value;
      const double v2 = solve_inner(prob.with_gamma(g2), x, y).value;
      if (v1 < v2 - 1e-10) ++mono_bad;

      GridSpecW grid;
      if (prob.m == 1) {
        grid = {y.array() - 4.0, y.array() + 4.0, 1e-4};
      } else {
        grid = {Eigen::VectorXd::Constant(prob.m, -2.0), Eigen::VectorXd::Constant(prob.m, 2.0), 2e-2};
      }
      const GridResult gr = grid_minimize(prob, x, y, grid);
      const double slope = std::max(1.0, inner_objective_gradient(prob, x, y, s.w).norm());
      const double err = gr.value - s.value;
      worst_grid = std::max(worst_grid, std::abs(err) / (grid.step * slope));
      if (err < -1e-9 || err > 2 * grid.step * slope) ++grid_bad;
    }
    pass = pass && upper_bad == 0 && mono_bad == 0 && grid_bad == 0 && feasible > 0;
    detail += fmt::format("{}: {} feasible, {} upper-bound, {} monotonicity, {} grid violations (worst {:.2f} steps); ",
                          name, feasible, upper_bad, mono_bad, grid_bad, worst_grid);
  }
  return {pass, detail};
}

Outcome derivative_consistency() {
  std::mt19937_64 rng(104);
  bool pass = true;
  std::string detail;
  for (const char* name : {"band.blp", "toy.blp", "disk.blp", "kink.blp"}) {
    const BilevelProblem prob = test::fixture(name);
    const std::string n = name;
    const Regime regime = n == "band.blp" || n == "toy.blp" ? Regime::weakly_convex : Regime::dini;
    int exact = 0, dir_bad = 0, grad_bad = 0;
    double worst_dir = 0.0, worst_grad = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Eigen::VectorXd x = test::uniform(rng, prob.n, -1, 1), y = test::uniform(rng, prob.m, -1.5, 1.5);
      const Direction d{test::uniform(rng, prob.n, -1, 1), test::uniform(rng, prob.m, -1, 1)};
      const DerivativeEstimate e = dir_derivative(prob, x, y, d, regime);
      if (e.kind == EstimateKind::exact_formula) {
        ++exact;
        const double diff = std::abs(e.upper - fd_dir_derivative(prob, x, y, d).estimate);
        worst_dir = std::max(worst_dir, diff);
        if (diff > 1e-4) ++dir_bad;
      }
      const Eigen::VectorXd gy = grad_y_envelope(prob, x, y);
      for (int j = 0; j < prob.m; ++j) {
        const double h = 1e-5;
        Eigen::VectorXd yp = y, ym = y;
        yp[j] += h;
        ym[j] -= h;
        const double fd = (solve_inner(prob, x, yp, InnerOptions::probe()).value -
                           solve_inner(prob, x, ym, InnerOptions::probe()).value) /
                          (2 * h);
        const double rel = std::abs(fd - gy[j]) / std::max(1.0, std::abs(gy[j]));
        worst_grad = std::max(worst_grad, rel);
        if (rel > 1e-5) ++grad_bad;
      }
    }
    pass = pass && dir_bad == 0 && grad_bad == 0 && exact > 0;
    detail += fmt::format("{}: {}/100 exact, max |d error| {:.1e}, max grad_y rel error {:.1e}; ", name, exact,
                          worst_dir, worst_grad);
  }
  return {pass, detail};
}

Outcome midpoint_suite() {
  const BilevelProblem band = test::fixture("band.blp");
  const Eigen::VectorXd lo = test::vec({-1, -2}), hi = test::vec({1, 0});
  const WeakConvexityReport r = weak_convexity_check(band, lo, hi, 500, 1);
  const WeakConvexityReport zero = weak_convexity_check(band, lo, hi, 500, 1, 0.0);
  const double rho_y = band.rho_f / (1 - band.gamma * band.rho_f);
  const WeakConvexityReport partial = weak_convexity_check(band, lo, hi, 500, 1, rho_y);
  const bool pass = r.midpoint.evaluated == 500 && r.midpoint.violations == 0 && zero.midpoint.violations >= 1;
  return {pass, fmt::format("rho_v={:.6g}: {}/{} violations; rho_v=0: {} violations; rho_v={:.6g} from the "
                            "y-modulus (information): {} violations",
                            r.rho_v, r.midpoint.violations, r.midpoint.evaluated, zero.midpoint.violations, rho_y,
                            partial.midpoint.violations)};
}

// Lower-level solution reached by proximal point iterations from y0.
Eigen::VectorXd proximal_fixed_point(const BilevelProblem& prob, const Eigen::VectorXd& x, Eigen::VectorXd y) {
  for (int it = 0; it < 400; ++it) {
    const Eigen::VectorXd w = solve_inner(prob, x, y).w;
    const double step = (w - y).lpNorm<Eigen::Infinity>();
    y = w;
    if (step <= 1e-14) break;
  }
  return y;
}

Outcome certificate_soundness() {
  std::mt19937_64 rng(106);
  int instances = 0, found = 0, reverified = 0, induced = 0, skipped = 0, numeric = 0;
  std::string failures;
  for (const char* name : {"band.blp", "kink.blp", "toy.blp", "disk.blp", "gap.blp", "izero.blp", "qnfail.blp"}) {
    const BilevelProblem prob = test::fixture(name);
    std::vector<Eigen::VectorXd> xs;
    for (int k = 0; k < 20; ++k) xs.push_back(test::uniform(rng, prob.n, -1, 1));
    xs.push_back(Eigen::VectorXd::Zero(prob.n));
    xs.push_back(Eigen::VectorXd::Constant(prob.n, 0.5));
    for (const auto& x : xs) {
      const Eigen::VectorXd y = proximal_fixed_point(prob, x, test::uniform(rng, prob.m, -2, 2));
      try {
        require_vp_feasible(prob, x, y);
      } catch (const InfeasiblePointError&) {
        ++skipped;
        continue;
      }
      const double h = 1e-6;
      const Eigen::VectorXd xh = x.array() + h;
      const Eigen::VectorXd slope = (proximal_fixed_point(prob, xh, y) - y) / h;
      std::vector<std::optional<Direction>> dirs{std::nullopt};
      dirs.push_back(Direction{Eigen::VectorXd::Ones(prob.n), slope});
      dirs.push_back(Direction{-Eigen::VectorXd::Ones(prob.n), -slope});
      for (int k = 0; k < 3; ++k)
        dirs.push_back(Direction{test::uniform(rng, prob.n, -1, 1), test::uniform(rng, prob.m, -1, 1)});
      for (const auto& d : dirs) {
        try {
          ++instances;
          const MpccComparison c = compare_with_mpcc(prob, x, y, d);
          if (!c.certificate) continue;
          ++found;
          const double viol = certificate_violation(prob, x, y, *c.certificate);
          const double scale = std::max(1.0, c.certificate->alpha + c.certificate->lambda_g.lpNorm<1>() +
                                                 c.certificate->lambda_G.lpNorm<1>());
          if (viol <= 1e-8 * scale) ++reverified;
          else failures += fmt::format(" {} residual {:.2e};", name, viol);
          if (c.induced_valid &&
              s_system_violation(prob, x, y, c.certificate->lambda_bar, c.certificate->induced) <= 1e-8 * scale)
            ++induced;
          else failures += fmt::format(" {} induced system infeasible;", name);
        } catch (const ValidationError&) {
          --instances;
          ++skipped;
        } catch (const NumericError& e) {
          ++numeric;
          failures += fmt::format(" {} numeric error: {};", name, e.what());
        }
      }
    }
  }
  const bool pass = found > 0 && reverified == found && induced == found && numeric == 0;
  return {pass, fmt::format("{} instances, {} certificates, {} re-verified, {} with feasible induced system, "
                            "{} skipped (non-critical direction or infeasible point), {} numeric errors{}",
                            instances, found, reverified, induced, skipped, numeric, failures)};
}

Outcome lp_kernel() {
  std::mt19937_64 rng(107);
  std::uniform_int_distribution<int> nvars(2, 8), nrows(1, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal;
  int lp_bad = 0, empty = 0;
  double worst_lp = 0.0;
  for (int k = 0; k < 200; ++k) {
    const int n = nvars(rng);
    Polyhedron P(n);
    const Eigen::VectorXd ub = test::uniform(rng, n, 0.5, 3);
    for (int i = 0; i < n; ++i) P.add_ineq(Eigen::RowVectorXd::Unit(n, i), ub[i]);
    const int rows = nrows(rng);
    for (int r = 0; r < rows; ++r) {
      Eigen::RowVectorXd a(n);
      for (int i = 0; i < n; ++i) a[i] = normal(rng);
      P.add_ineq(a, 0.5 + 2.5 * u(rng));
    }
    if (u(rng) < 0.3) {
      Eigen::RowVectorXd a(n);
      for (int i = 0; i < n; ++i) a[i] = normal(rng);
      P.add_eq(a, normal(rng));
    }
    Eigen::VectorXd c(n);
    for (int i = 0; i < n; ++i) c[i] = normal(rng);
    const LPOutcome lp = lp_optimize(c, P, Sense::maximize);
    const auto V = vertices(P, Exec::parallel);
    if (V.empty()) {
      ++empty;
      if (lp.status != LPStatus::infeasible) ++lp_bad;
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : V) best = std::max(best, c.dot(v));
    const double diff = lp.status == LPStatus::optimal ? std::abs(lp.value - best)
                                                        : std::numeric_limits<double>::infinity();
    worst_lp = std::max(worst_lp, diff);
    if (diff > 1e-7) ++lp_bad;
  }

  // Homogeneous systems with a planted answer: even ones contain a ray z* with
  // a.z* = -|a_perp|/2 on every row, odd ones carry y >= 0 with A^T y > 0.
  std::mt19937_64 ray_rng(108);
  int cone_bad = 0, nonzero = 0;
  for (int k = 0; k < 100; ++k) {
    const int n = std::uniform_int_distribution<int>(2, 5)(rng);
    const int rows = std::uniform_int_distribution<int>(1, 5)(rng);
    const bool plant_ray = k % 2 == 0;
    Polyhedron P(n, false);
    for (int i = 0; i < n; ++i) P.nonneg[i] = !plant_ray || u(rng) < 0.7;
    Eigen::MatrixXd A(rows, n);
    for (int r = 0; r < rows; ++r)
      for (int i = 0; i < n; ++i) A(r, i) = normal(rng);
    if (plant_ray) {
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = P.nonneg[i] ? 0.5 + std::abs(normal(rng)) : normal(rng);
      z.normalize();
      for (int r = 0; r < rows; ++r) {
        const Eigen::RowVectorXd perp = A.row(r) - A.row(r).dot(z) * z.transpose();
        A.row(r) = perp - 0.5 * perp.norm() * z.transpose();
      }
    } else {
      const Eigen::VectorXd y = test::uniform(rng, rows, 0.5, 1.5), c = test::uniform(rng, n, 0.5, 1.5);
      A.row(rows - 1) += (c - A.transpose() * y).transpose() / y[rows - 1];
    }
    for (int r = 0; r < rows; ++r) P.add_ineq(A.row(r), 0.0);
    const ConeTest t = cone_only_zero(P);
    bool sampled = false;
    for (int s = 0; s < 4096 && !sampled; ++s) {
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = P.nonneg[i] ? std::abs(normal(ray_rng)) : normal(ray_rng);
      sampled = (P.A_in * z).maxCoeff() <= 0.0;
    }
    nonzero += !t.only_zero;
    if (sampled == t.only_zero || plant_ray == t.only_zero) ++cone_bad;
  }
  return {lp_bad == 0 && cone_bad == 0,
          fmt::format("LP: {} disagreements over 200 polyhedra ({} empty), max |LP - vertex max| {:.1e}; cone: {} "
                      "disagreements over 100 systems ({} with nonzero elements)",
                      lp_bad, empty, worst_lp, cone_bad, nonzero)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"worked example reproduction", worked_example},
      {"closed-form Moreau oracle", moreau_oracle},
      {"envelope inequalities", envelope_inequalities},
      {"derivative consistency", derivative_consistency},
      {"weak-convexity midpoint suite", midpoint_suite},
      {"certificate soundness", certificate_soundness},
      {"LP kernel", lp_kernel},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} criterion {} {}: {}", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

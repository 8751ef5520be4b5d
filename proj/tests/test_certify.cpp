#include <doctest.h>

#include <random>

#include "bec/certify.hpp"
#include "bec/error.hpp"
#include "support.hpp"

using namespace bec;
using bec::test::vec;

namespace {

Direction dir(std::initializer_list<double> u, std::initializer_list<double> v) { return {vec(u), vec(v)}; }

// Feasible points of the value-function reformulation: y is the lower-level solution.
std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> feasible_points(const std::string& name, int count,
                                                                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> out;
  for (int k = 0; k < count; ++k) {
    const double x = u(rng);
    double y = 0.0;
    if (name == "band.blp") y = k % 2 == 0 ? x - 1 : x + 1;
    if (name == "kink.blp") y = -std::abs(x);
    out.push_back({vec({x}), vec({y})});
  }
  return out;
}

}  // namespace

TEST_CASE("lower multiplier sets") {
  BilevelProblem band = test::fixture("band.blp");
  MultiplierSet s = lower_multiplier_set(band, vec({0}), vec({-1}));
  auto V = vertices(s.effective());
  REQUIRE(V.size() == 1);
  CHECK((V[0] - vec({0, 2})).norm() <= 1e-7);

  s = lower_multiplier_set(band, vec({0}), vec({-1}), dir({1}, {1}));
  REQUIRE(s.directional);
  V = vertices(s.effective());
  REQUIRE(V.size() == 1);
  CHECK((V[0] - vec({0, 2})).norm() <= 1e-7);

  CHECK_THROWS_AS(lower_multiplier_set(band, vec({0}), vec({-1}), dir({1}, {-1})), ValidationError);
  CHECK_THROWS_AS(lower_multiplier_set(band, vec({0}), vec({-1.5})), InfeasiblePointError);

  BilevelProblem toy = test::fixture("toy.blp");
  V = vertices(lower_multiplier_set(toy, vec({0.4}), vec({0})).effective());
  REQUIRE(V.size() == 1);
  CHECK(V[0].norm() <= 1e-12);
}

TEST_CASE("critical cone at the band reference point") {
  BilevelProblem band = test::fixture("band.blp");
  const Eigen::VectorXd x = vec({0}), y = vec({-1});
  CHECK(in_critical_cone(band, x, y, dir({1}, {1}), Regime::weakly_convex).inside);
  CHECK(in_critical_cone(band, x, y, dir({0}, {0}), Regime::weakly_convex).inside);
  const CriticalConeReport bad = in_critical_cone(band, x, y, dir({1}, {-1}), Regime::weakly_convex);
  CHECK_FALSE(bad.inside);
  CHECK(bad.rows[0].value == doctest::Approx(4 / std::sqrt(2.0)));
  CHECK_FALSE(bad.rows[0].ok);
  CHECK_FALSE(in_critical_cone(band, x, y, dir({-1}, {1}), Regime::weakly_convex).inside);
  for (double tau : {1e-3, 1.0, 250.0})
    for (auto d : {dir({1}, {1}), dir({1}, {-1}), dir({-1}, {1}), dir({-1}, {-1}), dir({0.3}, {0.3})})
      CHECK(in_critical_cone(band, x, y, d.scaled(tau), Regime::weakly_convex).inside ==
            in_critical_cone(band, x, y, d, Regime::weakly_convex).inside);
  CHECK_THROWS_AS(in_critical_cone(band, x, vec({-0.5}), dir({1}, {1}), Regime::weakly_convex),
                  InfeasiblePointError);
}

TEST_CASE("critical cone needs an available regime") {
  BilevelProblem disk = test::fixture("disk.blp");
  CHECK_THROWS_AS(in_critical_cone(disk, vec({0}), vec({0, 1}), dir({1}, {0, 0}), Regime::weakly_convex),
                  RegimeError);
}

TEST_CASE("stationarity certificates at the band reference point") {
  BilevelProblem band = test::fixture("band.blp");
  const Eigen::VectorXd x = vec({0}), y = vec({-1});
  auto c = verify_stationarity(band, x, y, std::nullopt, StationaritySystem::skkt);
  REQUIRE(c);
  CHECK(c->alpha == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(c->lambda_g.norm() <= 1e-9);
  CHECK(c->lambda_G.size() == 0);
  CHECK((c->lambda_bar - vec({0, 2})).norm() <= 1e-9);
  CHECK(c->residual <= 1e-8);
  CHECK((c->induced.mu_g - vec({0, -2})).norm() <= 1e-9);
  CHECK(c->induced.mu_e.norm() == 0.0);
  CHECK(c->induced.mu_lambda.norm() == 0.0);

  auto w = verify_stationarity(band, x, y, dir({1}, {1}), StationaritySystem::wckkt);
  REQUIRE(w);
  CHECK(w->alpha == doctest::Approx(c->alpha));
  CHECK((w->lambda_bar - c->lambda_bar).norm() <= 1e-9);
  CHECK((w->lambda_g - c->lambda_g).norm() <= 1e-9);

  CHECK_THROWS_AS(verify_stationarity(band, x, y, dir({1}, {-1}), StationaritySystem::wckkt), ValidationError);
  CHECK_THROWS_AS(verify_stationarity(band, x, y, std::nullopt, StationaritySystem::wckkt), ValidationError);
  CHECK_THROWS_AS(verify_stationarity(band, x, vec({-0.5}), std::nullopt, StationaritySystem::skkt),
                  InfeasiblePointError);
}

TEST_CASE("no certificate at a non-stationary toy point") {
  BilevelProblem toy = test::fixture("toy.blp");
  CHECK_FALSE(verify_stationarity(toy, vec({0.2}), vec({0}), std::nullopt, StationaritySystem::skkt));
}

TEST_CASE("S-stationarity") {
  BilevelProblem band = test::fixture("band.blp");
  SStationarityReport r = verify_s_stationarity(band, vec({0}), vec({-1}), vec({0, 2}));
  CHECK(r.stationary);
  CHECK(r.I0.empty());
  CHECK(r.residual <= 1e-8);
  SMultipliers mu{Eigen::VectorXd(0), vec({0, -2}), vec({0}), vec({0, 0})};
  CHECK(s_system_violation(band, vec({0}), vec({-1}), vec({0, 2}), mu) <= 1e-12);

  CHECK_THROWS_AS(verify_s_stationarity(band, vec({0}), vec({-1}), vec({0, 1})), ValidationError);
  CHECK_THROWS_AS(verify_s_stationarity(band, vec({0}), vec({-1}), vec({1, 2})), ValidationError);

  BilevelProblem iz = test::fixture("izero.blp");
  SStationarityReport z = verify_s_stationarity(iz, vec({0}), vec({0}), vec({0}));
  CHECK(z.I0 == std::vector<int>{0});
  CHECK_FALSE(z.stationary);
  SMultipliers forced{Eigen::VectorXd(0), vec({-1}), vec({0}), vec({0})};
  CHECK(s_system_violation(iz, vec({0}), vec({0}), vec({0}), forced) == doctest::Approx(1.0));
}

TEST_CASE("comparison with S-stationarity") {
  BilevelProblem band = test::fixture("band.blp");
  MpccComparison c = compare_with_mpcc(band, vec({0}), vec({-1}), std::nullopt);
  REQUIRE(c.certificate);
  CHECK(c.induced_valid);
  REQUIRE(c.s_report);
  CHECK(c.s_report->stationary);
  CHECK_FALSE(c.gap);
  CHECK(c.directional_rows.empty());

  MpccComparison cd = compare_with_mpcc(band, vec({0}), vec({-1}), dir({1}, {1}));
  REQUIRE(cd.certificate);
  CHECK(cd.directional_rows.empty());

  BilevelProblem gap = test::fixture("gap.blp");
  MpccComparison g = compare_with_mpcc(gap, vec({0}), vec({0}), std::nullopt);
  CHECK_FALSE(g.certificate);
  CHECK(g.gap);
  REQUIRE(g.gap_multipliers.size() == 1);

  BilevelProblem toy = test::fixture("toy.blp");
  MpccComparison t = compare_with_mpcc(toy, vec({0}), vec({0}), std::nullopt);
  CHECK(t.degenerate);
}

TEST_CASE("directional rows added by the refined system") {
  BilevelProblem kink = test::fixture("kink.blp");
  // At the origin both constraints are active; d = (1, -1) keeps g2 active and leaves g1.
  MpccComparison c = compare_with_mpcc(kink, vec({0}), vec({0}), dir({1}, {-1}), Regime::weakly_convex);
  CHECK(c.directional_rows.size() == 2);
}

TEST_CASE("refined system at the zero direction matches the plain one") {
  std::mt19937_64 rng(11);
  for (const std::string name : {"band.blp", "kink.blp", "toy.blp"}) {
    BilevelProblem prob = test::fixture(name);
    for (const auto& [x, y] : feasible_points(name, 50, rng)) {
      const Direction zero{Eigen::VectorXd::Zero(prob.n), Eigen::VectorXd::Zero(prob.m)};
      auto a = verify_stationarity(prob, x, y, std::nullopt, StationaritySystem::skkt);
      auto b = verify_stationarity(prob, x, y, zero, StationaritySystem::wckkt);
      CHECK(a.has_value() == b.has_value());
      for (const auto& c : {a, b}) {
        if (!c) continue;
        CHECK(certificate_violation(prob, x, y, *c) <= 1e-8);
        CHECK(s_system_violation(prob, x, y, c->lambda_bar, c->induced) <= 1e-8);
        CHECK(verify_s_stationarity(prob, x, y, c->lambda_bar).stationary);
      }
    }
  }
}

TEST_CASE("quasi-normality at the band reference point") {
  BilevelProblem band = test::fixture("band.blp");
  CQReport r = check_quasi_normality(band, vec({0}), vec({-1}), dir({1}, {1}));
  CHECK(r.check == CQCheck::quasi_normality_direction);
  CHECK(r.verdict == Verdict::certificate_modulo_sampling);
  CHECK_FALSE(r.sampling_evidence.empty());
  REQUIRE(r.lp_witnesses.size() == 1);
  // (alpha, nu_g1, nu_g2) on the slice alpha + nu = 1.
  CHECK((r.lp_witnesses[0] - vec({1.0 / 3, 0, 2.0 / 3})).norm() <= 1e-9);

  CQReport h = check_quasi_normality(band, vec({0}), vec({-1}), dir({-1}, {1}));
  CHECK(h.verdict == Verdict::holds);
  CHECK(h.sampling_evidence.empty());
}

TEST_CASE("quasi-normality fails when the sign conditions are realized") {
  BilevelProblem qf = test::fixture("qnfail.blp");
  CQReport r = check_quasi_normality(qf, vec({0}), vec({0}), dir({1}, {0}));
  CHECK(r.verdict == Verdict::fails);
  SamplingPlan plan;
  CHECK(r.sampling_evidence.size() == plan.t.size());
  for (const auto& ev : r.sampling_evidence)
    for (double v : ev.values) CHECK(v > 0);
}

TEST_CASE("quasi-normality variants check their hypotheses") {
  BilevelProblem band = test::fixture("band.blp");
  CHECK_THROWS_AS(check_quasi_normality(band, vec({0}), vec({-1}), dir({1}, {1}), QNVariant::iii), RegimeError);
  Assumptions a;
  a.rcr = a.rs = true;
  CHECK(check_quasi_normality(band, vec({0}), vec({-1}), dir({1}, {1}), QNVariant::iii, a).verdict ==
        Verdict::certificate_modulo_sampling);
  CHECK(check_quasi_normality(band, vec({0}), vec({-1}), dir({1}, {1}), QNVariant::i).verdict ==
        Verdict::certificate_modulo_sampling);
  CHECK_THROWS_AS(check_quasi_normality(band, vec({0}), vec({-1}), dir({0}, {0})), ValidationError);
  BilevelProblem disk = test::fixture("disk.blp");
  CHECK_THROWS_AS(check_quasi_normality(disk, vec({0}), vec({0, 0}), dir({1}, {0, 0})), Error);
}

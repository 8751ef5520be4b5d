#include <doctest.h>

#include <random>

#include "bec/error.hpp"
#include "bec/lpcore.hpp"
#include "support.hpp"

using namespace bec;
using bec::test::vec;

namespace {

Eigen::RowVectorXd row(std::initializer_list<double> v) { return vec(v).transpose(); }

// Lambda at the band fixture's point (0,-1): lambda1 - lambda2 = -2, lambda1 = 0.
Polyhedron band_multipliers() {
  Polyhedron P(2);
  P.add_eq(row({1, -1}), -2);
  P.fix_zero(0);
  return P;
}

// Bounded random polyhedron with a known feasible point; some variables free.
Polyhedron random_bounded(std::mt19937_64& rng, int nv) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::bernoulli_distribution coin(0.3);
  Polyhedron P(nv);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(nv);
  for (int j = 0; j < nv; ++j) {
    P.nonneg[j] = !coin(rng);
    z[j] = P.nonneg[j] ? 0.5 * (u(rng) + 1) : 0.5 * u(rng);
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(nv);
    e[j] = 1;
    P.add_ineq(e, 2 + u(rng));
    if (!P.nonneg[j]) P.add_ineq(-e, 2 + u(rng));
  }
  std::uniform_int_distribution<int> cnt(0, 4);
  for (int k = cnt(rng); k > 0; --k) {
    Eigen::RowVectorXd a = bec::test::uniform(rng, nv, -1, 1).transpose();
    P.add_ineq(a, a.dot(z) + 0.5 * (u(rng) + 1));
  }
  if (nv > 1 && coin(rng)) {
    Eigen::RowVectorXd a = bec::test::uniform(rng, nv, -1, 1).transpose();
    P.add_eq(a, a.dot(z));
  }
  return P;
}

}  // namespace

TEST_CASE("lp_feasible") {
  LPOutcome r = lp_feasible(band_multipliers());
  REQUIRE(r.status == LPStatus::optimal);
  CHECK(r.witness[0] == doctest::Approx(0.0));
  CHECK(r.witness[1] == doctest::Approx(2.0));

  Polyhedron neg(1);
  neg.add_eq(row({1}), -1);
  CHECK(lp_feasible(neg).status == LPStatus::infeasible);
  CHECK(lp_feasible(neg).phase1_residual > tol::lp_feasibility);

  LPOutcome empty = lp_feasible(Polyhedron(1));
  REQUIRE(empty.status == LPStatus::optimal);
  CHECK(empty.witness[0] == 0.0);
}

TEST_CASE("lp_optimize") {
  CHECK(lp_optimize(vec({0, 0}), band_multipliers(), Sense::maximize).value == 0.0);

  Polyhedron simplex(2);
  simplex.add_eq(row({1, 1}), 1);
  LPOutcome r = lp_optimize(vec({1, 0}), simplex, Sense::maximize);
  REQUIRE(r.status == LPStatus::optimal);
  CHECK(r.value == doctest::Approx(1.0));

  LPOutcome unb = lp_optimize(vec({1}), Polyhedron(1), Sense::maximize);
  REQUIRE(unb.status == LPStatus::unbounded);
  CHECK(unb.ray[0] > 0);

  // Free variable: min x s.t. x >= -3.
  Polyhedron free(1, false);
  free.add_ineq(row({-1}), 3);
  LPOutcome fr = lp_optimize(vec({1}), free, Sense::minimize);
  REQUIRE(fr.status == LPStatus::optimal);
  CHECK(fr.value == doctest::Approx(-3.0));
}

TEST_CASE("redundant and degenerate rows") {
  Polyhedron P(3);
  P.add_eq(row({1, 1, 1}), 1);
  P.add_eq(row({2, 2, 2}), 2);
  P.add_ineq(row({1, 0, 0}), 0);
  LPOutcome r = lp_optimize(vec({0, 1, 2}), P, Sense::maximize);
  REQUIRE(r.status == LPStatus::optimal);
  CHECK(r.value == doctest::Approx(2.0));
  CHECK(P.contains(r.witness));
}

TEST_CASE("cone_only_zero") {
  Polyhedron c(2);
  c.add_eq(row({-2, 1}), 0);
  ConeTest t = cone_only_zero(c);
  CHECK_FALSE(t.only_zero);
  CHECK(t.witness[0] == doctest::Approx(1.0 / 3));
  CHECK(t.witness[1] == doctest::Approx(2.0 / 3));

  Polyhedron pinned(1);
  pinned.add_ineq(row({1}), 0);
  CHECK(cone_only_zero(pinned).only_zero);

  Polyhedron diag(2);
  diag.add_eq(row({1, -1}), 0);
  ConeTest d = cone_only_zero(diag);
  CHECK_FALSE(d.only_zero);
  CHECK(d.witness[0] == doctest::Approx(0.5));
  CHECK(d.witness[1] == doctest::Approx(0.5));

  // Unsigned coordinates are probed in both signs.
  Polyhedron line(2, false);
  line.add_eq(row({1, 1}), 0);
  ConeTest l = cone_only_zero(line);
  CHECK_FALSE(l.only_zero);
  CHECK(l.extreme_witnesses.size() == 2);
  CHECK(cone_only_zero(line, {}).witness.lpNorm<1>() == doctest::Approx(1.0));

  Polyhedron inhom(1);
  inhom.add_eq(row({1}), 1);
  CHECK_THROWS_AS(cone_only_zero(inhom), ValidationError);
}

TEST_CASE("vertices") {
  auto v = vertices(band_multipliers());
  REQUIRE(v.size() == 1);
  CHECK((v[0] - vec({0, 2})).norm() <= 1e-7);

  Polyhedron simplex(2);
  simplex.add_eq(row({1, 1}), 1);
  auto s = vertices(simplex);
  REQUIRE(s.size() == 2);
  CHECK((s[0] - vec({0, 1})).norm() <= 1e-12);
  CHECK((s[1] - vec({1, 0})).norm() <= 1e-12);

  Polyhedron neg(1);
  neg.add_eq(row({1}), -1);
  CHECK(vertices(neg).empty());

  CHECK_THROWS_AS(vertices(Polyhedron(13)), ValidationError);
}

TEST_CASE("min/max symmetry and witness re-verification on random LPs") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 200; ++k) {
    const int nv = std::uniform_int_distribution<int>(1, 6)(rng);
    Polyhedron P = random_bounded(rng, nv);
    Eigen::VectorXd c = bec::test::uniform(rng, nv, -1, 1);
    LPOutcome mx = lp_optimize(c, P, Sense::maximize);
    LPOutcome mn = lp_optimize(-c, P, Sense::minimize);
    REQUIRE(mx.status == LPStatus::optimal);
    REQUIRE(mn.status == LPStatus::optimal);
    CHECK(mx.value == doctest::Approx(-mn.value).epsilon(1e-9));
    CHECK(P.max_violation(mx.witness) <= tol::lp_feasibility);
    CHECK(P.max_violation(mn.witness) <= tol::lp_feasibility);
  }
}

TEST_CASE("optimum equals the best vertex; serial and parallel enumeration agree") {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 60; ++k) {
    const int nv = std::uniform_int_distribution<int>(1, 6)(rng);
    Polyhedron P = random_bounded(rng, nv);
    auto vs = vertices(P, Exec::serial);
    auto vp = vertices(P, Exec::parallel);
    REQUIRE(vs.size() == vp.size());
    for (std::size_t i = 0; i < vs.size(); ++i) CHECK(vs[i] == vp[i]);
    REQUIRE_FALSE(vs.empty());
    Eigen::VectorXd c = bec::test::uniform(rng, nv, -1, 1);
    double best = -1e300;
    for (const auto& v : vs) {
      CHECK(P.contains(v));
      best = std::max(best, c.dot(v));
    }
    CHECK(lp_optimize(c, P, Sense::maximize).value == doctest::Approx(best).epsilon(1e-9));
  }
}

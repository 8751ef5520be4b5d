#include <doctest.h>

#include "bec/error.hpp"
#include "bec/model.hpp"
#include "support.hpp"

using namespace bec;
using bec::test::vec;

namespace {

std::string band_text(const std::string& gamma, const std::string& rho = "2") {
  return "[problem]\nn = 1\nm = 1\ngamma = " + gamma + "\nrho_f = " + rho +
         "\n[upper]\nobjective = \"(x1 - y1)^2\"\n"
         "[lower]\nobjective = \"-(x1-y1)^2\"\nconstraints = \"y1 - x1 - 1\" ; \"x1 - y1 - 1\"\n";
}

}  // namespace

TEST_CASE("load_problem enforces the strict gamma bound") {
  CHECK_THROWS_AS(load_problem(band_text("0.25")), ValidationError);
  BilevelProblem prob = load_problem(band_text("0.2"));
  CHECK(prob.n == 1);
  CHECK(prob.m == 1);
  CHECK(prob.p() == 2);
  CHECK(prob.q() == 0);
  CHECK(prob.gamma == 0.2);
  CHECK(prob.rho_f == 2.0);
}

TEST_CASE("load_problem: convex toy and gamma sign") {
  BilevelProblem toy = test::fixture("toy.blp");
  CHECK(toy.rho_f == 0.0);
  CHECK(toy.p() == 1);
  CHECK(eval(toy.g[0], {vec({3}), vec({-2})}) == -1.0);
  CHECK(load_problem(band_text("1e6", "0")).gamma == 1e6);
  try {
    load_problem(band_text("-1"));
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("gamma must be positive") != std::string::npos);
  }
}

TEST_CASE("load_problem rejects malformed files") {
  CHECK_THROWS_AS(load_problem("[problem]\nn = 1\n"), ValidationError);
  CHECK_THROWS_AS(load_problem(band_text("0.2") + "[lower]\nextra = 1\n"), ValidationError);
  CHECK_THROWS_AS(load_problem("[problem]\nn = 1\nm = 1\ngamma = 0.1\nrho_f = 0\n[upper]\nobjective = \"x2\"\n"
                               "[lower]\nobjective = \"y1\"\n"),
                  ParseError);
  CHECK_THROWS_AS(load_problem("[problem]\nn = 1\nm = 1\ngamma = 0.1\nrho_f = 0\nGamma = 2\n"), ValidationError);
  CHECK_THROWS_AS(load_problem_file(test::data_path("does-not-exist.blp")), ValidationError);
}

TEST_CASE("empty lower constraints become the constant -1") {
  BilevelProblem prob = load_problem(
      "[problem]\nn = 1\nm = 1\ngamma = 0.5\nrho_f = 0\n[upper]\nobjective = \"y1\"\nconstraints =\n"
      "[lower]\nobjective = \"0.5*y1^2\"  # comment\nconstraints =\n");
  REQUIRE(prob.p() == 1);
  CHECK(eval(prob.g[0], {vec({0}), vec({0})}) == -1.0);
  CHECK(prob.q() == 0);
}

TEST_CASE("save then load is the identity on the data model") {
  for (const char* name : {"band.blp", "toy.blp", "disk.blp"}) {
    BilevelProblem a = test::fixture(name);
    std::string text = save_problem(a);
    BilevelProblem b = load_problem(text);
    CHECK(save_problem(b) == text);
    CHECK(b.n == a.n);
    CHECK(b.m == a.m);
    CHECK(b.gamma == a.gamma);
    CHECK(b.rho_f == a.rho_f);
    CHECK(b.rho_f_joint == a.rho_f_joint);
    CHECK(b.f_convexity == a.f_convexity);
    CHECK(b.g_convexity == a.g_convexity);
    CHECK(b.p() == a.p());
    CHECK(b.q() == a.q());
  }
}

TEST_CASE("validate samples the weak-convexity modulus") {
  BilevelProblem prob = test::fixture("band.blp");
  const BilevelProblem before = prob;
  ValidationReport r = validate(prob, {-2.0, 2.0, 100});
  CHECK(r.ok());
  CHECK(r.min_eig_yy == doctest::Approx(-2.0));
  CHECK(r.min_eig_joint == doctest::Approx(-4.0));
  CHECK(save_problem(prob) == save_problem(before));

  BilevelProblem wrong = prob;
  wrong.rho_f = 1.0;
  wrong.gamma = 0.1;
  ValidationReport bad = validate(wrong, {-2.0, 2.0, 100});
  CHECK_FALSE(bad.rho_f_consistent);

  BilevelProblem joint_wrong = prob;
  joint_wrong.rho_f_joint = 2.0;
  CHECK_FALSE(validate(joint_wrong).rho_joint_consistent);

  BilevelProblem linear = load_problem(
      "[problem]\nn = 1\nm = 1\ngamma = 0.5\nrho_f = 0\n[upper]\nobjective = \"y1\"\n"
      "[lower]\nobjective = \"x1 + 2*y1\"\nconstraints = \"y1 - 1\" ; \"-y1 - 1\"\n");
  CHECK(validate(linear).ok());
}

TEST_CASE("with_gamma only needs strong convexity of the inner problem") {
  BilevelProblem prob = test::fixture("band.blp");
  CHECK(prob.with_gamma(0.4).gamma == 0.4);
  CHECK(prob.with_gamma(0.49).gamma == 0.49);
  CHECK_THROWS_AS(prob.with_gamma(0.5), ValidationError);
  CHECK_THROWS_AS(prob.with_gamma(0.0), ValidationError);
}

TEST_CASE("active_set") {
  BilevelProblem prob = test::fixture("band.blp");
  ActiveSet a = active_set(prob.g, {vec({0}), vec({-1})}, 1e-8);
  CHECK(a.indices == std::vector<int>{1});
  CHECK(active_set(prob.g, {vec({0}), vec({0})}, 1e-8).indices.empty());
  try {
    active_set(prob.g, {vec({0}), vec({-1.1})}, 1e-8);
    FAIL("expected infeasibility");
  } catch (const InfeasiblePointError& e) {
    CHECK(e.violated() == std::vector<int>{1});
  }
}

TEST_CASE("active_set is monotone in the tolerance") {
  BilevelProblem prob = test::fixture("band.blp");
  const double tols[] = {1e-12, 1e-8, 1e-4, 1e-2, 0.5, 1.5, 3.0};
  for (double y : {-1.0, -0.99999, -0.6, 0.0, 0.7, 0.999999999}) {
    std::vector<int> prev;
    for (double t : tols) {
      ActiveSet a = active_set(prob.g, {vec({0}), vec({y})}, t);
      for (int i : prev) CHECK(a.contains(i));
      prev = a.indices;
    }
  }
}

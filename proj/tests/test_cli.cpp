#include <doctest.h>

#include <sstream>

#include "bec/cli.hpp"
#include "bec/example1.hpp"
#include "bec/report.hpp"
#include "support.hpp"

using namespace bec;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
  Report report;
};

Run run(std::vector<std::string> args) {
  for (auto& a : args)
    if (a.size() > 4 && a.substr(a.size() - 4) == ".blp" && a.find('/') == std::string::npos) a = test::data_path(a);
  args.push_back("--format");
  args.push_back("machine");
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  r.report = Report::parse_machine(r.out);
  return r;
}

std::string get(const Run& r, const std::string& key) {
  const std::string* v = r.report.find(key);
  REQUIRE_MESSAGE(v, key);
  return *v;
}

}  // namespace

TEST_CASE("report machine format round-trips") {
  Report r;
  r.command = "bec test\twith tab";
  r.add("a.b", 0.1);
  r.add("a.c", std::string("line\nbreak \\ back"));
  r.add("a.v", test::vec({1, -2.5, 1e-300}));
  r.add("a.flag", true);
  r.add("a.empty", std::string());
  r.add_time("total", 0.25);
  const Report back = Report::parse_machine(r.machine(true));
  CHECK(back == r);
  REQUIRE(back.timings.size() == 1);
  CHECK(back.timings[0].second == 0.25);
  CHECK(Report::parse_machine(r.machine()).timings.empty());
  CHECK(std::stod(*back.find("a.b")) == 0.1);
  CHECK_THROWS(Report::parse_machine("a\tb\n"));
  CHECK_THROWS(Report::parse_machine("command\tx\nbad line\n"));
}

TEST_CASE("envelope command") {
  Run r = run({"envelope", "band.blp", "--point", "0,-1", "--direction", "1,1", "--regime", "wc", "--fd"});
  CHECK(r.code == exit_ok);
  CHECK(std::stod(get(r, "envelope.value")) == doctest::Approx(-1).epsilon(1e-12));
  CHECK(std::stod(get(r, "envelope.w")) == doctest::Approx(-1).epsilon(1e-12));
  CHECK(std::abs(std::stod(get(r, "derivative.upper"))) <= 1e-8);
  CHECK(get(r, "fd.agrees") == "true");

  Run t = run({"envelope", "toy.blp", "--point", "0,1"});
  CHECK(t.code == exit_ok);
  CHECK(std::stod(get(t, "envelope.value")) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  CHECK(run({"envelope", "missing.blp", "--point", "0,1"}).code == exit_input);
  CHECK(run({"envelope", "toy.blp", "--point", "0"}).code == exit_input);
  CHECK(run({"envelope", "toy.blp", "--point", "0,1+1"}).code == exit_input);
  CHECK(run({"envelope", "disk.blp", "--point", "0,2,0", "--direction", "1,0,0", "--regime", "wc"}).code ==
        exit_input);
}

TEST_CASE("certify command") {
  Run r = run({"certify", "band.blp", "--point", "0,-1", "--direction", "1,1", "--system", "wckkt", "--cq", "mfcq,qn"});
  CHECK(r.code == exit_ok);
  CHECK(get(r, "cq.mfcq.verdict") == "holds");
  CHECK(get(r, "cq.qn.verdict") == "certificate-modulo-sampling");
  CHECK(get(r, "certificate.found") == "true");
  CHECK(std::stod(get(r, "certificate.alpha")) == doctest::Approx(1).epsilon(1e-9));
  CHECK(get(r, "certificate.lambda_bar") == "0,2");
  CHECK(get(r, "cone.inside") == "true");

  Run s = run({"certify", "band.blp", "--point", "0,-1", "--system", "skkt"});
  CHECK(s.code == exit_ok);
  CHECK(get(s, "mpcc.induced_valid") == "true");
  CHECK(get(s, "mpcc.s_stationary") == "true");

  Run bad = run({"certify", "band.blp", "--point", "0,-1.5"});
  CHECK(bad.code == exit_input);
  CHECK(get(bad, "error.kind") == "infeasible-point");
  CHECK(get(bad, "error.violated") == "1");
  CHECK(bad.err.find("g2") != std::string::npos);

  Run none = run({"certify", "toy.blp", "--point", "0.2,0"});
  CHECK(none.code == exit_negative);
  CHECK(get(none, "certificate.found") == "false");

  Run gap = run({"certify", "gap.blp", "--point", "0,0"});
  CHECK(gap.code == exit_negative);
  CHECK(get(gap, "mpcc.gap") == "true");

  CHECK(run({"certify", "band.blp", "--point", "0,-1", "--direction", "1,-1", "--system", "wckkt"}).code ==
        exit_input);
  CHECK(run({"certify", "band.blp", "--point", "0,-1", "--system", "other"}).code == exit_input);
}

TEST_CASE("cq command") {
  Run r = run({"cq", "qnfail.blp", "--point", "0,0", "--direction", "1,0", "--cq", "mfcq,qn"});
  CHECK(r.code == exit_negative);
  CHECK(get(r, "cq.qn.verdict") == "fails");
  Run b = run({"cq", "band.blp", "--point", "0,-1", "--direction", "1,1", "--cq", "mfcq,joint-mfcq,foscms"});
  CHECK(b.code == exit_ok);
  CHECK(get(b, "cq.joint-mfcq.verdict") == "holds");
  CHECK(run({"cq", "band.blp", "--point", "0,-1", "--cq", "licq"}).code == exit_input);
}

TEST_CASE("validate command") {
  CHECK(run({"validate", "band.blp"}).code == exit_ok);
  CHECK(run({"validate", "missing.blp"}).code == exit_input);
}

TEST_CASE("example1 command") {
  Run r = run({"example1"});
  CHECK(r.code == exit_ok);
  CHECK(get(r, "example1.passed") == "8/8");
  Run g = run({"example1", "--gamma", "0.49"});
  CHECK(g.code == exit_ok);
  Run c = run({"example1", "--corrupt"});
  CHECK(c.code == exit_negative);
  CHECK(get(c, "check.4.status") == "FAIL");
}

TEST_CASE("reports are deterministic") {
  const std::vector<std::string> args{"certify", "band.blp", "--point", "0,-1", "--direction", "1,1", "--cq", "mfcq,qn"};
  const Run a = run(args), b = run(args);
  CHECK(a.out == b.out);
  CHECK(a.out.find("timing.") == std::string::npos);
  std::vector<std::string> timed = args;
  timed.push_back("--timings");
  CHECK(run(timed).out.find("timing.total") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  std::ostringstream out, err;
  CHECK(run_cli({}, out, err) == exit_input);
  CHECK(run_cli({"frobnicate"}, out, err) == exit_input);
  CHECK(run_cli({"--help"}, out, err) == exit_ok);
}

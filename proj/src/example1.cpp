#include "bec/example1.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <functional>

#include "bec/certify.hpp"
#include "bec/envelope.hpp"
#include "bec/error.hpp"
#include "bec/kernels.hpp"
#include "bec/model.hpp"

namespace bec {

const char* example1_fixture() {
  return R"(# min (x-y)^2  s.t.  y solves  min -(x-y)^2  s.t.  y-x-1 <= 0, x-y-1 <= 0
[problem]
n = 1
m = 1
gamma = 0.2
rho_f = 2
rho_f_joint = 4
f_convexity = jointly-weakly-convex
g_convexity = jointly-quasiconvex

[upper]
objective = "(x1 - y1)^2"
constraints =

[lower]
objective = "-(x1 - y1)^2"
constraints = "y1 - x1 - 1" ; "x1 - y1 - 1"
)";
}

bool Example1Result::passed() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return !checks.empty();
}

namespace {

using Check = std::function<bool(std::string&)>;

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }
Eigen::VectorXd v2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

std::string vec_str(const Eigen::VectorXd& v) { return "(" + format_vector(v) + ")"; }

}  // namespace

Example1Result run_example1(const Example1Options& opts) {
  const auto start = std::chrono::steady_clock::now();
  std::string text = example1_fixture();
  if (opts.corrupt) {
    const std::string from = "\"x1 - y1 - 1\"";
    text.replace(text.find(from), from.size(), "\"x1 - y1 - 1.25\"");
  }
  BilevelProblem base = load_problem(text);
  const BilevelProblem prob = opts.gamma ? base.with_gamma(*opts.gamma) : base;
  const Eigen::VectorXd x = v1(0.0), y = v1(-1.0);

  std::vector<std::pair<std::string, Check>> plan;

  plan.emplace_back("lower-level solutions S(x) = {x-1, x+1}", [&](std::string& d) {
    bool ok = true;
    for (double xs : {-0.5, 0.0, 0.7}) {
      GridSpecW grid{v1(xs - 3), v1(xs + 3), 1e-4};
      const GridResult r = grid_minimize(prob, v1(xs), std::nullopt, grid, opts.exec);
      const bool here = r.argmins.size() == 2 && std::abs(r.argmins[0][0] - (xs - 1)) <= 2e-4 &&
                        std::abs(r.argmins[1][0] - (xs + 1)) <= 2e-4;
      std::string found;
      for (const auto& a : r.argmins) found += (found.empty() ? "" : ", ") + format_real(a[0]);
      d += fmt::format("x={}: {{{}}} ", xs, found);
      ok = ok && here;
    }
    return ok;
  });

  plan.emplace_back("value function v(x) = -1 and v_gamma(0,-1) = -1", [&](std::string& d) {
    bool ok = true;
    for (double xs : {-0.5, 0.0, 0.7}) {
      GridSpecW grid{v1(xs - 3), v1(xs + 3), 1e-4};
      const double v = grid_minimize(prob, v1(xs), std::nullopt, grid, opts.exec).value;
      d += fmt::format("v({})={} ", xs, format_real(v));
      ok = ok && std::abs(v + 1) <= 1e-3;
    }
    std::vector<double> gammas{0.1, 0.2, 0.4};
    if (opts.gamma) gammas.push_back(*opts.gamma);
    for (double g : gammas) {
      const InnerSolution s = solve_inner(base.with_gamma(g), x, y);
      d += fmt::format("gamma={}: S={} v={} ", g, format_real(s.w[0]), format_real(s.value));
      ok = ok && std::abs(s.w[0] + 1) <= 1e-8 && std::abs(s.value + 1) <= 1e-8;
    }
    return ok;
  });

  plan.emplace_back("gradients at (0,-1)", [&](std::string& d) {
    const EvalPoint p{x, y};
    const Eigen::VectorXd gF = gradient(prob.F, p), gf = gradient(prob.f, p);
    const Eigen::VectorXd g1 = gradient(prob.g[0], p), g2 = gradient(prob.g[1], p);
    d = fmt::format("grad F={} grad f={} grad g1={} grad g2={}", vec_str(gF), vec_str(gf), vec_str(g1), vec_str(g2));
    return gF == v2(2, -2) && gf == v2(-2, 2) && g1 == v2(-1, 1) && g2 == v2(1, -1);
  });

  plan.emplace_back("multiplier set Lambda(0,-1) = {(0,2)}", [&](std::string& d) {
    const auto V = vertices(lower_multiplier_set(prob, x, y).effective());
    for (const auto& v : V) d += vec_str(v) + " ";
    return V.size() == 1 && (V[0] - v2(0, 2)).lpNorm<Eigen::Infinity>() <= 1e-7;
  });

  plan.emplace_back("critical cone accepts (1,1), rejects (1,-1) and (-1,1)", [&](std::string& d) {
    auto in = [&](double u, double v) {
      return in_critical_cone(prob, x, y, {v1(u), v1(v)}, Regime::weakly_convex).inside;
    };
    const bool a = in(1, 1), b = in(1, -1), c = in(-1, 1);
    d = fmt::format("(1,1): {} (1,-1): {} (-1,1): {}", a, b, c);
    return a && !b && !c;
  });

  plan.emplace_back("directional derivative v'_gamma(0,-1;1,0) = 0", [&](std::string& d) {
    const Direction dir{v1(1), v1(0)};
    const DerivativeEstimate e = dir_derivative(prob, x, y, dir, Regime::weakly_convex);
    const DerivativeEstimate fd = fd_dir_derivative(prob, x, y, dir, default_fd_steps, opts.exec);
    d = fmt::format("formula {} ({}), finite difference {}", format_real(e.upper), to_string(e.kind),
                    format_real(fd.estimate));
    return e.kind == EstimateKind::exact_formula && std::abs(e.upper) <= 1e-8 && std::abs(fd.estimate) <= 1e-3;
  });

  plan.emplace_back("directional quasi-normality at d = (1,1)", [&](std::string& d) {
    const CQReport r = check_quasi_normality(prob, x, y, {v1(1), v1(1)});
    d = fmt::format("{}: {}", to_string(r.verdict), r.detail);
    return r.verdict == Verdict::certificate_modulo_sampling || r.verdict == Verdict::holds;
  });

  plan.emplace_back("stationarity certificate", [&](std::string& d) {
    const MpccComparison c = compare_with_mpcc(prob, x, y, std::nullopt);
    if (!c.certificate) {
      d = "no certificate";
      return false;
    }
    const auto& k = *c.certificate;
    d = fmt::format("alpha={} lambda_g={} lambda_bar={} residual={:.3g} induced S-stationary={}", format_real(k.alpha),
                    vec_str(k.lambda_g), vec_str(k.lambda_bar), k.residual, c.induced_valid);
    return k.residual <= 1e-8 && c.induced_valid && c.s_report && c.s_report->stationary;
  });

  Example1Result out;
  out.report.add("example1.gamma", prob.gamma);
  out.report.add("example1.corrupt", opts.corrupt);
  int idx = 0;
  for (auto& [name, fn] : plan) {
    Example1Check c;
    c.name = name;
    try {
      c.pass = fn(c.detail);
    } catch (const Error& e) {
      c.pass = false;
      c.detail += std::string(c.detail.empty() ? "" : " ") + "error: " + e.what();
    }
    spdlog::info("example1 check {} {}: {}", idx + 1, c.pass ? "PASS" : "FAIL", c.name);
    const std::string key = fmt::format("check.{}", ++idx);
    out.report.add(key + ".name", c.name);
    out.report.add(key + ".status", c.pass ? "PASS" : "FAIL");
    out.report.add(key + ".detail", c.detail);
    out.checks.push_back(std::move(c));
  }
  int passed = 0;
  for (const auto& c : out.checks) passed += c.pass;
  out.report.add("example1.passed", fmt::format("{}/{}", passed, out.checks.size()));
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.report.add_time("example1", out.seconds);
  return out;
}

}  // namespace bec

#include "bec/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <sstream>

#include "bec/certify.hpp"
#include "bec/envelope.hpp"
#include "bec/error.hpp"
#include "bec/example1.hpp"
#include "bec/model.hpp"
#include "bec/report.hpp"

namespace bec {

void configure_logging() {
  static bool done = false;
  if (!done) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("bec"));
    done = true;
  }
  const char* env = std::getenv("BEC_LOG");
  const std::string level = env ? env : "quiet";
  if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else {
    spdlog::set_level(spdlog::level::warn);
    if (level != "quiet") spdlog::warn("BEC_LOG={} is not one of quiet, info, debug; using quiet", level);
  }
}

namespace {

struct Options {
  std::string file;
  std::string point;
  std::string direction;
  std::string regime;
  std::string system;
  std::string cq = "mfcq";
  std::string assume;
  std::string variant = "ii";
  std::string format = "human";
  bool fd = false;
  bool timings = false;
  std::optional<double> gamma;
  bool corrupt = false;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

Eigen::VectorXd parse_reals(const std::string& s, int expected, const char* what) {
  const auto parts = split(s, ',');
  if (static_cast<int>(parts.size()) != expected)
    throw ValidationError(fmt::format("{} needs {} comma-separated reals, got {}", what, expected, parts.size()));
  Eigen::VectorXd v(expected);
  for (int i = 0; i < expected; ++i) {
    const std::string& p = parts[static_cast<std::size_t>(i)];
    char* end = nullptr;
    const double d = std::strtod(p.c_str(), &end);
    if (p.empty() || end != p.c_str() + p.size() || !std::isfinite(d))
      throw ValidationError(fmt::format("{}: `{}` is not a real number", what, p));
    v[i] = d;
  }
  return v;
}

Regime parse_regime(const std::string& s, const BilevelProblem& prob) {
  if (s.empty()) return default_regime(prob);
  if (s == "wc") return Regime::weakly_convex;
  if (s == "dini") return Regime::dini;
  if (s == "rcr") return Regime::rcr;
  throw ValidationError("--regime must be wc, dini or rcr");
}

Assumptions parse_assume(const std::string& s) {
  Assumptions a;
  if (s.empty()) return a;
  for (const auto& t : split(s, ',')) {
    if (t == "guignard") a.guignard = true;
    else if (t == "mscq") a.mscq = true;
    else if (t == "rs") a.rs = true;
    else if (t == "rcr") a.rcr = true;
    else if (t == "inner-calm") a.inner_calm = true;
    else throw ValidationError(fmt::format("unknown assumption `{}` (guignard, mscq, rs, rcr, inner-calm)", t));
  }
  return a;
}

QNVariant parse_variant(const std::string& s) {
  if (s == "i") return QNVariant::i;
  if (s == "ii") return QNVariant::ii;
  if (s == "iii") return QNVariant::iii;
  throw ValidationError("--variant must be i, ii or iii");
}

std::string digest(const BilevelProblem& prob) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : save_problem(prob)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

struct Context {
  BilevelProblem prob;
  Eigen::VectorXd x, y;
  std::optional<Direction> d;
};

Context load(const Options& o, Report& r, bool need_point = true) {
  Context c{load_problem_file(o.file), {}, {}, std::nullopt};
  const auto& p = c.prob;
  r.add("problem.file", o.file);
  r.add("problem.digest", digest(p));
  r.add("problem.dims", fmt::format("n={} m={} p={} q={}", p.n, p.m, p.p(), p.q()));
  r.add("problem.gamma", p.gamma);
  if (!need_point) return c;
  if (o.point.empty()) throw ValidationError("--point is required");
  const Eigen::VectorXd z = parse_reals(o.point, p.n + p.m, "--point");
  c.x = z.head(p.n);
  c.y = z.tail(p.m);
  r.add("point.x", c.x);
  r.add("point.y", c.y);
  if (!o.direction.empty()) {
    c.d = make_direction(p, parse_reals(o.direction, p.n + p.m, "--direction"));
    r.add("direction", c.d->stacked());
  }
  return c;
}

void add_cq(Report& r, const std::string& key, const CQReport& q) {
  r.add(key + ".verdict", to_string(q.verdict));
  r.add(key + ".detail", q.detail);
  r.add(key + ".marginal", q.marginal);
  for (std::size_t i = 0; i < q.lp_witnesses.size(); ++i)
    r.add(fmt::format("{}.witness.{}", key, i + 1), q.lp_witnesses[i]);
  for (std::size_t i = 0; i < q.sampling_evidence.size(); ++i) {
    const auto& ev = q.sampling_evidence[i];
    std::string vals;
    for (double v : ev.values) vals += (vals.empty() ? "" : ",") + format_real(v);
    r.add(fmt::format("{}.sample.{}", key, i + 1),
          fmt::format("t={} direction=({}) values=({})", format_real(ev.t), format_vector(ev.direction), vals));
  }
}

void add_derivative(Report& r, const std::string& key, const DerivativeEstimate& e) {
  r.add(key + ".kind", to_string(e.kind));
  r.add(key + ".regime", to_string(e.regime));
  r.add(key + ".lower", e.lower);
  r.add(key + ".upper", e.upper);
  r.add(key + ".estimate", e.estimate);
  for (std::size_t i = 0; i < e.witnesses.size(); ++i)
    if (e.witnesses[i].size()) r.add(fmt::format("{}.witness.{}", key, i + 1), e.witnesses[i]);
  if (!e.quotients.empty()) {
    Eigen::VectorXd q = Eigen::Map<const Eigen::VectorXd>(e.quotients.data(), static_cast<Eigen::Index>(e.quotients.size()));
    r.add(key + ".quotients", q);
  }
  for (std::size_t i = 0; i < e.preconditions.size(); ++i)
    r.add(fmt::format("{}.precondition.{}", key, i + 1),
          fmt::format("{}: {}", to_string(e.preconditions[i].verdict), e.preconditions[i].detail));
  if (!e.note.empty()) r.add(key + ".note", e.note);
}

int cmd_envelope(const Options& o, Report& r) {
  Context c = load(o, r);
  const InnerSolution s = solve_inner(c.prob, c.x, c.y);
  r.add("envelope.value", s.value);
  r.add("envelope.w", s.w);
  r.add("envelope.grad_y", Eigen::VectorXd((c.y - s.w) / c.prob.gamma));
  r.add("envelope.lambda", s.lambda);
  r.add("envelope.kkt_residual", s.kkt_residual);
  r.add("envelope.kkt_tol", tol::inner_kkt);
  if (!c.d) return exit_ok;
  const Regime reg = parse_regime(o.regime, c.prob);
  const DerivativeEstimate e = dir_derivative(c.prob, c.x, c.y, *c.d, reg, parse_assume(o.assume));
  add_derivative(r, "derivative", e);
  if (o.fd) {
    const DerivativeEstimate f = fd_dir_derivative(c.prob, c.x, c.y, *c.d);
    add_derivative(r, "fd", f);
    const double tol = 1e-4 * std::max(1.0, std::abs(f.estimate));
    r.add("fd.tol", tol);
    r.add("fd.agrees", f.estimate >= e.lower - tol && f.estimate <= e.upper + tol);
  }
  return exit_ok;
}

int run_cqs(const Options& o, const Context& c, Report& r, bool& any_fail) {
  const Assumptions a = parse_assume(o.assume);
  for (const auto& name : split(o.cq, ',')) {
    if (name.empty()) continue;
    CQReport q;
    if (name == "mfcq") {
      q = check_mfcq(c.prob, c.x, c.y);
    } else if (name == "joint-mfcq") {
      q = check_joint_mfcq(c.prob, c.x, c.y);
    } else if (name == "foscms") {
      if (!c.d) throw ValidationError("--cq foscms needs --direction");
      q = check_foscms_direction(c.prob, c.x, c.y, c.d->u);
    } else if (name == "qn") {
      if (!c.d) throw ValidationError("--cq qn needs --direction");
      q = check_quasi_normality(c.prob, c.x, c.y, *c.d, parse_variant(o.variant), a);
      r.add("cq.qn.variant", o.variant);
    } else {
      throw ValidationError(fmt::format("unknown check `{}` (mfcq, joint-mfcq, foscms, qn)", name));
    }
    add_cq(r, "cq." + name, q);
    any_fail = any_fail || q.verdict == Verdict::fails;
  }
  return exit_ok;
}

int cmd_cq(const Options& o, Report& r) {
  Context c = load(o, r);
  bool fail = false;
  run_cqs(o, c, r, fail);
  return fail ? exit_negative : exit_ok;
}

int cmd_certify(const Options& o, Report& r) {
  Context c = load(o, r);
  require_vp_feasible(c.prob, c.x, c.y);
  r.add("feasibility.ok", true);
  r.add("feasibility.tol", tol::certificate);

  StationaritySystem sys = c.d ? StationaritySystem::wckkt : StationaritySystem::skkt;
  if (o.system == "skkt") sys = StationaritySystem::skkt;
  else if (o.system == "wckkt") sys = StationaritySystem::wckkt;
  else if (!o.system.empty()) throw ValidationError("--system must be skkt or wckkt");
  const Regime reg = parse_regime(o.regime, c.prob);
  const Assumptions a = parse_assume(o.assume);

  bool fail = false;
  run_cqs(o, c, r, fail);

  if (c.d) {
    const CriticalConeReport cone = in_critical_cone(c.prob, c.x, c.y, *c.d, reg, a);
    r.add("cone.inside", cone.inside);
    r.add("cone.tol", tol::certificate);
    for (std::size_t i = 0; i < cone.rows.size(); ++i) {
      const auto& row = cone.rows[i];
      r.add(fmt::format("cone.row.{}", i + 1), fmt::format("{} = {} in [{}, {}] {}", row.name, format_real(row.value),
                                                          format_real(row.lower), format_real(row.upper),
                                                          row.ok ? "ok" : "violated"));
    }
  }

  const std::optional<Direction> d = sys == StationaritySystem::wckkt ? c.d : std::nullopt;
  const MpccComparison m = compare_with_mpcc(c.prob, c.x, c.y, d, reg, a);
  r.add("certificate.system", to_string(sys));
  r.add("certificate.found", m.certificate.has_value());
  if (m.certificate) {
    const auto& k = *m.certificate;
    r.add("certificate.branch", k.branch);
    r.add("certificate.alpha", k.alpha);
    r.add("certificate.lambda_g", k.lambda_g);
    r.add("certificate.lambda_G", k.lambda_G);
    r.add("certificate.lambda_bar", k.lambda_bar);
    r.add("certificate.residual", k.residual);
    r.add("certificate.tol", tol::certificate);
    r.add("mpcc.mu_G", k.induced.mu_G);
    r.add("mpcc.mu_g", k.induced.mu_g);
    r.add("mpcc.mu_e", k.induced.mu_e);
    r.add("mpcc.mu_lambda", k.induced.mu_lambda);
    r.add("mpcc.induced_violation", m.induced_violation);
    r.add("mpcc.induced_valid", m.induced_valid);
    if (m.s_report) r.add("mpcc.s_stationary", m.s_report->stationary);
  } else {
    r.add("mpcc.gap", m.gap);
    for (std::size_t i = 0; i < m.gap_multipliers.size(); ++i)
      r.add(fmt::format("mpcc.gap.lambda_bar.{}", i + 1), m.gap_multipliers[i]);
  }
  for (std::size_t i = 0; i < m.directional_rows.size(); ++i)
    r.add(fmt::format("mpcc.directional_row.{}", i + 1), m.directional_rows[i]);
  if (m.degenerate) r.add("mpcc.degenerate", true);
  return m.certificate ? exit_ok : exit_negative;
}

int cmd_validate(const Options& o, Report& r) {
  Context c = load(o, r, false);
  const ValidationReport v = validate(c.prob);
  r.add("validate.gamma", v.gamma_message);
  r.add("validate.min_eig_yy", v.min_eig_yy);
  r.add("validate.rho_f_consistent", v.rho_f_consistent);
  r.add("validate.min_eig_joint", v.min_eig_joint);
  r.add("validate.rho_joint_consistent", v.rho_joint_consistent);
  r.add("validate.dimensions_ok", v.dimensions_ok);
  for (std::size_t i = 0; i < v.messages.size(); ++i) r.add(fmt::format("validate.message.{}", i + 1), v.messages[i]);
  r.add("validate.ok", v.ok());
  return v.ok() ? exit_ok : exit_input;
}

int cmd_example1(const Options& o, Report& r) {
  Example1Options eo;
  eo.gamma = o.gamma;
  eo.corrupt = o.corrupt;
  Example1Result res = run_example1(eo);
  for (auto& e : res.report.entries) r.entries.push_back(std::move(e));
  for (auto& t : res.report.timings) r.timings.push_back(std::move(t));
  return res.passed() ? exit_ok : exit_negative;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();
  Options o;
  CLI::App app{"Moreau-envelope bilevel stationarity toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--format", o.format, "Output format")->check(CLI::IsMember({"human", "machine"}));
  app.add_flag("--timings", o.timings, "Include timings in the report");

  auto add_point = [&](CLI::App* s) {
    s->add_option("problem", o.file, "Problem file (.blp)")->required();
    s->add_option("--point", o.point, "x,y as comma-separated reals");
    s->add_option("--direction", o.direction, "u,v as comma-separated reals");
    s->add_option("--regime", o.regime, "wc, dini or rcr");
    s->add_option("--assume", o.assume, "guignard,mscq,rs,rcr,inner-calm");
  };
  CLI::App* env = app.add_subcommand("envelope", "Moreau envelope, proximal point and directional derivatives");
  add_point(env);
  env->add_flag("--fd", o.fd, "Cross-check with finite differences");
  CLI::App* cert = app.add_subcommand("certify", "Constraint qualifications and stationarity certificates");
  add_point(cert);
  cert->add_option("--system", o.system, "skkt or wckkt");
  cert->add_option("--cq", o.cq, "Checks: mfcq,joint-mfcq,foscms,qn");
  cert->add_option("--variant", o.variant, "Quasi-normality variant: i, ii or iii");
  CLI::App* cq = app.add_subcommand("cq", "Constraint qualification checks");
  add_point(cq);
  cq->add_option("--cq", o.cq, "Checks: mfcq,joint-mfcq,foscms,qn");
  cq->add_option("--variant", o.variant, "Quasi-normality variant: i, ii or iii");
  CLI::App* ex = app.add_subcommand("example1", "Reproduce the worked example");
  ex->add_option("--gamma", o.gamma, "Envelope parameter");
  ex->add_flag("--corrupt", o.corrupt, "Self-test: shift a constraint and expect mismatches");
  CLI::App* val = app.add_subcommand("validate", "Check a problem file");
  val->add_option("problem", o.file, "Problem file (.blp)")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_input;
  }

  Report r;
  r.command = "bec";
  for (const auto& a : args) r.command += " " + a;
  int code = exit_ok;
  const auto start = std::chrono::steady_clock::now();
  try {
    if (env->parsed()) code = cmd_envelope(o, r);
    else if (cert->parsed()) code = cmd_certify(o, r);
    else if (cq->parsed()) code = cmd_cq(o, r);
    else if (ex->parsed()) code = cmd_example1(o, r);
    else if (val->parsed()) code = cmd_validate(o, r);
  } catch (const InfeasiblePointError& e) {
    std::string idx;
    for (int i : e.violated()) idx += (idx.empty() ? "" : ",") + std::to_string(i);
    r.add("error.kind", "infeasible-point");
    r.add("error.message", e.what());
    r.add("error.violated", idx);
    code = exit_input;
  } catch (const ValidationError& e) {
    r.add("error.kind", "validation");
    r.add("error.message", e.what());
    code = exit_input;
  } catch (const ParseError& e) {
    r.add("error.kind", "parse");
    r.add("error.message", e.what());
    code = exit_input;
  } catch (const DomainError& e) {
    r.add("error.kind", "domain");
    r.add("error.message", e.what());
    code = exit_input;
  } catch (const NumericError& e) {
    r.add("error.kind", "numeric");
    r.add("error.message", e.what());
    code = exit_numeric;
  } catch (const std::exception& e) {
    r.add("error.kind", "internal");
    r.add("error.message", e.what());
    code = exit_numeric;
  }
  r.add("exit", code);
  r.add_time("total", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  if (code >= exit_input) err << "error: " << *r.find("error.message") << "\n";
  out << (o.format == "machine" ? r.machine(o.timings) : r.human(o.timings));
  return code;
}

}  // namespace bec

#include "bec/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "bec/error.hpp"

namespace bec {

std::string to_string(FConvexity c) {
  switch (c) {
    case FConvexity::jointly_weakly_convex: return "jointly-weakly-convex";
    case FConvexity::y_weakly_convex: return "y-weakly-convex";
    case FConvexity::none: return "none";
  }
  return "none";
}

std::string to_string(GConvexity c) {
  switch (c) {
    case GConvexity::jointly_quasiconvex: return "jointly-quasiconvex";
    case GConvexity::y_quasiconvex: return "y-quasiconvex";
    case GConvexity::none: return "none";
  }
  return "none";
}

BilevelProblem BilevelProblem::with_gamma(double new_gamma) const {
  if (!(new_gamma > 0)) throw ValidationError("gamma must be positive");
  if (new_gamma * rho_f >= 1.0)
    throw ValidationError(fmt::format("gamma={} makes the inner problem nonconvex (gamma*rho_f={} >= 1)", new_gamma,
                                      new_gamma * rho_f));
  BilevelProblem copy = *this;
  copy.gamma = new_gamma;
  return copy;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string unquote(const std::string& s, int line) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') return t.substr(1, t.size() - 2);
  if (!t.empty() && (t.front() == '"' || t.back() == '"'))
    throw ValidationError(fmt::format("line {}: unbalanced quote in {}", line, t));
  return t;
}

// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::vector<std::string> split_constraints(const std::string& value, int line) {
  std::vector<std::string> parts;
  std::string current;
  bool quoted = false;
  for (char c : value) {
    if (c == '"') quoted = !quoted;
    if (c == ';' && !quoted) {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  parts.push_back(current);
  std::vector<std::string> out;
  for (auto& p : parts) {
    std::string t = unquote(p, line);
    if (!t.empty()) out.push_back(t);
  }
  if (out.empty() && parts.size() > 1) throw ValidationError(fmt::format("line {}: empty constraint list item", line));
  return out;
}

double parse_real(const std::string& key, const std::string& text, int line) {
  std::string t = trim(text);
  double v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    throw ValidationError(fmt::format("line {}: {} must be a real number, got '{}'", line, key, t));
  return v;
}

int parse_int(const std::string& key, const std::string& text, int line) {
  std::string t = trim(text);
  int v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw ValidationError(fmt::format("line {}: {} must be an integer, got '{}'", line, key, t));
  return v;
}

struct RawEntry {
  std::string value;
  int line = 0;
};

}  // namespace

BilevelProblem load_problem(const std::string& text) {
  std::map<std::string, std::map<std::string, RawEntry>> sections;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string l = trim(strip_comment(raw));
    if (l.empty()) continue;
    if (l.front() == '[') {
      if (l.back() != ']') throw ValidationError(fmt::format("line {}: malformed section header", line));
      section = trim(std::string_view(l).substr(1, l.size() - 2));
      if (section != "problem" && section != "upper" && section != "lower")
        throw ValidationError(fmt::format("line {}: unknown section [{}]", line, section));
      continue;
    }
    auto eq = l.find('=');
    if (eq == std::string::npos) throw ValidationError(fmt::format("line {}: expected key = value", line));
    if (section.empty()) throw ValidationError(fmt::format("line {}: key outside of a section", line));
    std::string key = trim(std::string_view(l).substr(0, eq));
    std::string value = trim(std::string_view(l).substr(eq + 1));
    auto& sec = sections[section];
    if (sec.count(key)) throw ValidationError(fmt::format("line {}: duplicate key '{}' in [{}]", line, key, section));
    sec[key] = {value, line};
  }

  static const std::map<std::string, std::vector<std::string>> allowed{
      {"problem", {"n", "m", "gamma", "rho_f", "rho_f_joint", "f_convexity", "g_convexity"}},
      {"upper", {"objective", "constraints"}},
      {"lower", {"objective", "constraints"}}};
  for (auto& [name, keys] : sections)
    for (auto& [key, entry] : keys) {
      const auto& ok = allowed.at(name);
      if (std::find(ok.begin(), ok.end(), key) == ok.end())
        throw ValidationError(fmt::format("line {}: unknown key '{}' in [{}]", entry.line, key, name));
    }

  auto require = [&](const std::string& sec, const std::string& key) -> const RawEntry& {
    auto s = sections.find(sec);
    if (s == sections.end() || !s->second.count(key))
      throw ValidationError(fmt::format("missing key '{}' in [{}]", key, sec));
    return s->second.at(key);
  };
  auto optional = [&](const std::string& sec, const std::string& key) -> const RawEntry* {
    auto s = sections.find(sec);
    if (s == sections.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  };

  BilevelProblem prob;
  const auto& n_entry = require("problem", "n");
  const auto& m_entry = require("problem", "m");
  prob.n = parse_int("n", n_entry.value, n_entry.line);
  prob.m = parse_int("m", m_entry.value, m_entry.line);
  if (prob.n < 1 || prob.m < 1) throw ValidationError("n and m must be at least 1");

  const auto& gamma_entry = require("problem", "gamma");
  prob.gamma = parse_real("gamma", gamma_entry.value, gamma_entry.line);
  const auto& rho_entry = require("problem", "rho_f");
  prob.rho_f = parse_real("rho_f", rho_entry.value, rho_entry.line);
  if (auto* e = optional("problem", "rho_f_joint")) {
    prob.rho_f_joint = parse_real("rho_f_joint", e->value, e->line);
    if (*prob.rho_f_joint < 0) throw ValidationError("rho_f_joint must be nonnegative");
  }
  if (auto* e = optional("problem", "f_convexity")) {
    std::string v = unquote(e->value, e->line);
    if (v == "jointly-weakly-convex") prob.f_convexity = FConvexity::jointly_weakly_convex;
    else if (v == "y-weakly-convex") prob.f_convexity = FConvexity::y_weakly_convex;
    else if (v == "none") prob.f_convexity = FConvexity::none;
    else throw ValidationError(fmt::format("line {}: unknown f_convexity '{}'", e->line, v));
  }
  if (auto* e = optional("problem", "g_convexity")) {
    std::string v = unquote(e->value, e->line);
    if (v == "jointly-quasiconvex") prob.g_convexity = GConvexity::jointly_quasiconvex;
    else if (v == "y-quasiconvex") prob.g_convexity = GConvexity::y_quasiconvex;
    else if (v == "none") prob.g_convexity = GConvexity::none;
    else throw ValidationError(fmt::format("line {}: unknown g_convexity '{}'", e->line, v));
  }

  if (!(prob.gamma > 0)) throw ValidationError("gamma must be positive");
  if (prob.rho_f < 0) throw ValidationError("rho_f must be nonnegative");
  if (prob.rho_f > 0 && !(prob.gamma < 1.0 / (2.0 * prob.rho_f)))
    throw ValidationError(fmt::format("gamma={} is outside (0, 1/(2 rho_f)) = (0, {})", prob.gamma,
                                      1.0 / (2.0 * prob.rho_f)));

  auto parse_at = [&](const RawEntry& e, const std::string& text) {
    try {
      return parse_expr(text, prob.n, prob.m);
    } catch (const ParseError& err) {
      throw ParseError(err.offset(), fmt::format("line {}: `{}`: {}", e.line, text, err.what()));
    }
  };

  const auto& F_entry = require("upper", "objective");
  prob.F = parse_at(F_entry, unquote(F_entry.value, F_entry.line));
  if (auto* e = optional("upper", "constraints"))
    for (auto& c : split_constraints(e->value, e->line)) prob.G.push_back(parse_at(*e, c));

  const auto& f_entry = require("lower", "objective");
  prob.f = parse_at(f_entry, unquote(f_entry.value, f_entry.line));
  if (auto* e = optional("lower", "constraints"))
    for (auto& c : split_constraints(e->value, e->line)) prob.g.push_back(parse_at(*e, c));
  if (prob.g.empty()) prob.g.push_back(Expr::constant(-1.0));
  return prob;
}

BilevelProblem load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open problem file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return load_problem(buf.str());
}

std::string save_problem(const BilevelProblem& prob) {
  std::string out = "[problem]\n";
  out += fmt::format("n = {}\nm = {}\ngamma = {}\nrho_f = {}\n", prob.n, prob.m, prob.gamma, prob.rho_f);
  if (prob.rho_f_joint) out += fmt::format("rho_f_joint = {}\n", *prob.rho_f_joint);
  out += "f_convexity = " + to_string(prob.f_convexity) + "\n";
  out += "g_convexity = " + to_string(prob.g_convexity) + "\n";
  auto list = [](const std::vector<Expr>& cs) {
    std::string s;
    for (std::size_t i = 0; i < cs.size(); ++i) s += (i ? " ; \"" : "\"") + cs[i].to_string() + "\"";
    return s;
  };
  out += "\n[upper]\nobjective = \"" + prob.F.to_string() + "\"\n";
  out += "constraints = " + list(prob.G) + "\n";
  out += "\n[lower]\nobjective = \"" + prob.f.to_string() + "\"\n";
  out += "constraints = " + list(prob.g) + "\n";
  return out;
}

namespace {

// Visits a tensor grid with `k` nodes per coordinate over [lo, hi]^(n+m).
template <class Visit>
void for_each_grid_point(int n, int m, const GridSpec& grid, Visit visit) {
  const int dim = n + m;
  int k = std::max(2, static_cast<int>(std::lround(std::pow(std::max(grid.points, 1), 1.0 / dim))));
  std::vector<int> idx(dim, 0);
  EvalPoint p{Eigen::VectorXd(n), Eigen::VectorXd(m)};
  for (;;) {
    for (int i = 0; i < dim; ++i) {
      double t = grid.lo + (grid.hi - grid.lo) * idx[i] / (k - 1);
      if (i < n) p.x[i] = t;
      else p.y[i - n] = t;
    }
    visit(p);
    int i = 0;
    while (i < dim && ++idx[i] == k) idx[i++] = 0;
    if (i == dim) break;
  }
}

}  // namespace

ValidationReport validate(const BilevelProblem& prob, const GridSpec& grid) {
  ValidationReport r;

  if (!(prob.gamma > 0)) {
    r.gamma_ok = false;
    r.gamma_message = "gamma must be positive";
  } else if (prob.rho_f > 0 && !(prob.gamma < 1.0 / (2.0 * prob.rho_f))) {
    r.gamma_ok = false;
    r.gamma_message = fmt::format("gamma={} not in (0, 1/(2 rho_f)) = (0, {})", prob.gamma, 1.0 / (2.0 * prob.rho_f));
  } else {
    r.gamma_message = prob.rho_f > 0 ? fmt::format("gamma={} in (0, {})", prob.gamma, 1.0 / (2.0 * prob.rho_f))
                                     : fmt::format("gamma={} > 0 (rho_f = 0)", prob.gamma);
  }

  auto check_expr = [&](const Expr& e, const std::string& name) {
    if (e.max_index(VarKind::x) > prob.n || e.max_index(VarKind::y) > prob.m) {
      r.dimensions_ok = false;
      r.messages.push_back(fmt::format("{} uses variables beyond n={}, m={}", name, prob.n, prob.m));
    }
  };
  check_expr(prob.F, "F");
  check_expr(prob.f, "f");
  for (int i = 0; i < prob.q(); ++i) check_expr(prob.G[i], fmt::format("G{}", i + 1));
  for (int i = 0; i < prob.p(); ++i) check_expr(prob.g[i], fmt::format("g{}", i + 1));
  if (prob.g.empty()) {
    r.dimensions_ok = false;
    r.messages.push_back("lower level has no constraints; encode as the constant -1");
  }
  if (!r.dimensions_ok) return r;

  double min_yy = std::numeric_limits<double>::infinity();
  double min_joint = std::numeric_limits<double>::infinity();
  int skipped = 0;
  for_each_grid_point(prob.n, prob.m, grid, [&](const EvalPoint& p) {
    try {
      Eigen::MatrixXd h = hessian(prob.f, p);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> joint(h, Eigen::EigenvaluesOnly);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> yy(h.bottomRightCorner(prob.m, prob.m), Eigen::EigenvaluesOnly);
      min_joint = std::min(min_joint, joint.eigenvalues().minCoeff());
      min_yy = std::min(min_yy, yy.eigenvalues().minCoeff());
    } catch (const DomainError&) {
      ++skipped;
    }
  });
  if (skipped) r.messages.push_back(fmt::format("{} grid points skipped (outside the domain of f)", skipped));
  r.min_eig_yy = min_yy;
  r.min_eig_joint = min_joint;
  r.rho_f_consistent = min_yy >= -prob.rho_f - 1e-8;
  if (!r.rho_f_consistent)
    r.messages.push_back(fmt::format("min eigenvalue of hess_yy f is {} < -rho_f = {}", min_yy, -prob.rho_f));
  if (prob.f_convexity == FConvexity::jointly_weakly_convex) {
    r.rho_joint_consistent = min_joint >= -prob.joint_modulus() - 1e-8;
    if (!r.rho_joint_consistent)
      r.messages.push_back(fmt::format("min eigenvalue of the joint hessian of f is {} < -{}", min_joint,
                                       prob.joint_modulus()));
  }
  return r;
}

bool ActiveSet::contains(int i) const { return std::binary_search(indices.begin(), indices.end(), i); }

ActiveSet active_set(const std::vector<Expr>& constraints, const EvalPoint& p, double tolerance) {
  ActiveSet a;
  a.tolerance = tolerance;
  std::vector<int> violated;
  std::string listing;
  for (int i = 0; i < static_cast<int>(constraints.size()); ++i) {
    const double v = eval(constraints[i], p);
    if (v > tolerance) {
      violated.push_back(i);
      listing += fmt::format("{}#{}={:.3g}", listing.empty() ? "" : ", ", i + 1, v);
    } else if (std::abs(v) <= tolerance) {
      a.indices.push_back(i);
    }
  }
  if (!violated.empty())
    throw InfeasiblePointError("point is infeasible: constraint " + listing + " above tolerance", violated);
  return a;
}

}  // namespace bec

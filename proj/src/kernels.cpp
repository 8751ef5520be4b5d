#include "bec/kernels.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <cmath>
#include <limits>
#include <random>

#include "bec/error.hpp"

namespace bec {

namespace {

EnvelopeSample probe(const BilevelProblem& prob, const EvalPoint& p, const InnerOptions& opts) {
  EnvelopeSample s;
  try {
    InnerSolution sol = solve_inner(prob, p.x, p.y, opts);
    s.ok = true;
    s.value = sol.value;
    s.w = sol.w;
  } catch (const std::exception& e) {
    s.error = e.what();
  }
  return s;
}

}  // namespace

std::vector<EnvelopeSample> envelope_batch(const BilevelProblem& prob, const std::vector<EvalPoint>& points,
                                           const InnerOptions& opts, Exec exec) {
  std::vector<EnvelopeSample> out(points.size());
  const auto count = static_cast<std::int64_t>(points.size());
  if (exec == Exec::serial) {
    for (std::int64_t i = 0; i < count; ++i) out[i] = probe(prob, points[i], opts);
  } else {
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t i = 0; i < count; ++i) out[i] = probe(prob, points[i], opts);
  }
  return out;
}

namespace {

struct Lattice {
  std::vector<long long> counts;
  long long total = 1;

  void point(long long flat, const GridSpecW& g, Eigen::VectorXd& w) const {
    for (std::size_t d = 0; d < counts.size(); ++d) {
      const long long i = flat % counts[d];
      flat /= counts[d];
      w[d] = i + 1 == counts[d] ? g.hi[d] : g.lo[d] + i * g.step;
    }
  }
};

double grid_value(const BilevelProblem& prob, const Eigen::VectorXd& x, const std::optional<Eigen::VectorXd>& y,
                  const Eigen::VectorXd& w, double feas_tol) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  try {
    for (const auto& gi : prob.g)
      if (eval(gi, {x, w}) > feas_tol) return inf;
    double v = eval(prob.f, {x, w});
    if (y) v += (w - *y).squaredNorm() / (2 * prob.gamma);
    return v;
  } catch (const DomainError&) {
    return inf;
  }
}

}  // namespace

GridResult grid_minimize(const BilevelProblem& prob, const Eigen::VectorXd& x, const std::optional<Eigen::VectorXd>& y,
                         const GridSpecW& grid, Exec exec) {
  const int m = prob.m;
  if (grid.lo.size() != m || grid.hi.size() != m) throw ValidationError("grid box must have dimension m");
  if (!(grid.step > 0)) throw ValidationError("grid step must be positive");
  Lattice lat;
  for (int d = 0; d < m; ++d) {
    const long long c = static_cast<long long>(std::floor((grid.hi[d] - grid.lo[d]) / grid.step + 1e-9)) + 1;
    // The upper end is always included so that boundary minimizers are hit.
    const double last = grid.lo[d] + (c - 1) * grid.step;
    lat.counts.push_back(std::abs(last - grid.hi[d]) <= 1e-12 * std::max(1.0, std::abs(grid.hi[d])) ? c : c + 1);
    lat.total *= lat.counts.back();
  }
  if (lat.total > 50'000'000LL) throw ValidationError("grid too fine");

  std::vector<double> values(static_cast<std::size_t>(lat.total));
  auto fill = [&](long long i) {
    Eigen::VectorXd w(m);
    lat.point(i, grid, w);
    values[static_cast<std::size_t>(i)] = grid_value(prob, x, y, w, grid.feasibility_tol);
  };
  if (exec == Exec::serial) {
    for (long long i = 0; i < lat.total; ++i) fill(i);
  } else {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < lat.total; ++i) fill(i);
  }

  GridResult r;
  r.step = grid.step;
  double best = std::numeric_limits<double>::infinity();
  long long feasible = 0;
  if (exec == Exec::serial) {
    for (double v : values) {
      best = std::min(best, v);
      feasible += std::isfinite(v);
    }
  } else {
#pragma omp parallel for reduction(min : best) reduction(+ : feasible)
    for (long long i = 0; i < lat.total; ++i) {
      best = std::min(best, values[i]);
      feasible += std::isfinite(values[i]);
    }
  }
  r.value = best;
  r.feasible_points = feasible;
  if (!std::isfinite(best)) return r;

  const double cut = best + grid.argmin_tol * std::max(1.0, std::abs(best));
  std::vector<Eigen::VectorXd> near;
  for (long long i = 0; i < lat.total; ++i) {
    if (values[i] <= cut) {
      Eigen::VectorXd w(m);
      lat.point(i, grid, w);
      near.push_back(w);
    }
  }
  // Single-linkage clusters of grid neighbours, each reported by its mean.
  const double link = 1.5 * grid.step * std::sqrt(double(m));
  std::vector<int> label(near.size(), -1);
  int clusters = 0;
  for (std::size_t i = 0; i < near.size(); ++i) {
    if (label[i] >= 0) continue;
    label[i] = clusters;
    std::vector<std::size_t> stack{i};
    while (!stack.empty()) {
      std::size_t a = stack.back();
      stack.pop_back();
      for (std::size_t b = 0; b < near.size(); ++b)
        if (label[b] < 0 && (near[a] - near[b]).norm() <= link) {
          label[b] = clusters;
          stack.push_back(b);
        }
    }
    ++clusters;
  }
  for (int c = 0; c < clusters; ++c) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(m);
    int k = 0;
    for (std::size_t i = 0; i < near.size(); ++i)
      if (label[i] == c) {
        sum += near[i];
        ++k;
      }
    r.argmins.push_back(sum / k);
  }
  return r;
}

MidpointReport midpoint_check(const BilevelProblem& prob, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                              int pairs, double rho_v, unsigned long long seed, Exec exec, double slack) {
  const int n = prob.n, m = prob.m;
  if (lo.size() != n + m || hi.size() != n + m) throw ValidationError("midpoint box must have dimension n+m");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::VectorXd> z1(pairs), z2(pairs);
  std::vector<EvalPoint> pts;
  pts.reserve(3 * static_cast<std::size_t>(pairs));
  auto split = [&](const Eigen::VectorXd& z) { return EvalPoint{z.head(n), z.tail(m)}; };
  for (int k = 0; k < pairs; ++k) {
    z1[k].resize(n + m);
    z2[k].resize(n + m);
    for (int d = 0; d < n + m; ++d) {
      z1[k][d] = lo[d] + (hi[d] - lo[d]) * u(rng);
      z2[k][d] = lo[d] + (hi[d] - lo[d]) * u(rng);
    }
    pts.push_back(split(z1[k]));
    pts.push_back(split(z2[k]));
    pts.push_back(split(0.5 * (z1[k] + z2[k])));
  }
  const auto vals = envelope_batch(prob, pts, InnerOptions::probe(), exec);

  MidpointReport r;
  r.pairs = pairs;
  r.rho_v = rho_v;
  r.worst_excess = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < pairs; ++k) {
    const auto& a = vals[3 * k];
    const auto& b = vals[3 * k + 1];
    const auto& c = vals[3 * k + 2];
    if (!a.ok || !b.ok || !c.ok) continue;
    ++r.evaluated;
    const double bound = 0.5 * (a.value + b.value) + rho_v / 8.0 * (z1[k] - z2[k]).squaredNorm();
    const double excess = c.value - bound;
    r.worst_excess = std::max(r.worst_excess, excess);
    if (excess > slack) {
      ++r.violations;
      if (r.violating.size() < 8) r.violating.emplace_back(z1[k], z2[k]);
    }
  }
  return r;
}

}  // namespace bec

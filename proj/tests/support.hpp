#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>

#include "bec/model.hpp"

namespace bec::test {

inline std::string data_path(const std::string& name) { return std::string(BEC_DATA_DIR) + "/" + name; }

inline BilevelProblem fixture(const std::string& name) { return load_problem_file(data_path(name)); }

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

inline Eigen::VectorXd uniform(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

}  // namespace bec::test

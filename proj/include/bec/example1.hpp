#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bec/exec.hpp"
#include "bec/report.hpp"

namespace bec {

/// Problem text of the worked example (same content as data/band.blp).
const char* example1_fixture();

struct Example1Options {
  std::optional<double> gamma;  // replaces the fixture's gamma
  bool corrupt = false;         // shift g2 so that the expected values no longer hold
  Exec exec = Exec::parallel;
};

struct Example1Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Example1Result {
  std::vector<Example1Check> checks;
  Report report;
  double seconds = 0.0;

  bool passed() const;
};

Example1Result run_example1(const Example1Options& opts = {});

}  // namespace bec

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bec {

// Base of every error raised by the toolkit. The CLI maps subclasses to exit
// codes: input/validation problems -> 2, numerical failures -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error("at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Evaluation left the domain of an elementary function (log of a nonpositive
// number, division by zero, ...). `subexpression` is the offending node.
class DomainError : public Error {
 public:
  DomainError(const std::string& what, std::string subexpression)
      : Error(what + " in `" + subexpression + "`"), subexpression_(std::move(subexpression)) {}
  const std::string& subexpression() const { return subexpression_; }

 private:
  std::string subexpression_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class InfeasiblePointError : public ValidationError {
 public:
  InfeasiblePointError(const std::string& what, std::vector<int> violated)
      : ValidationError(what), violated_(std::move(violated)) {}
  // 0-based constraint indices with value above tolerance.
  const std::vector<int>& violated() const { return violated_; }

 private:
  std::vector<int> violated_;
};

// A caller-selected regime whose hypotheses are not met. The toolkit refuses
// instead of silently switching formulas.
class RegimeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class InfeasibleLowerLevelError : public NumericError {
 public:
  using NumericError::NumericError;
};

class EmptyMultiplierSetError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace bec

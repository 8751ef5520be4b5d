#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <string_view>

namespace bec {

enum class VarKind { x, y };
enum class UnaryOp { neg, sin, cos, exp, log, sqrt };
enum class BinaryOp { add, sub, mul, div };

// A point (x, y) in R^n x R^m.
struct EvalPoint {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// Immutable expression tree over the variables x1..xn, y1..ym.
///
/// Nodes are shared, so copying an Expr is cheap and a single tree may be
/// evaluated concurrently from several threads.
class Expr {
 public:
  enum class Kind { constant, variable, unary, binary, power };
  struct Node;

  Expr();  // the constant 0

  static Expr constant(double value);
  // `index` is 1-based, as in the textual grammar.
  static Expr variable(VarKind kind, int index);
  static Expr unary(UnaryOp op, Expr arg);
  static Expr binary(BinaryOp op, Expr lhs, Expr rhs);
  static Expr power(Expr base, int exponent);

  Kind kind() const;
  double constant_value() const;
  VarKind var_kind() const;
  int var_index() const;
  UnaryOp unary_op() const;
  BinaryOp binary_op() const;
  int exponent() const;
  Expr lhs() const;  // operand of unary/power, left operand of binary
  Expr rhs() const;

  // Fully parenthesized text accepted by parse_expr.
  std::string to_string() const;

  // Largest variable index of the given kind (0 if none).
  int max_index(VarKind kind) const;

  // Structural test: true if the tree is an affine function of (x, y).
  bool is_affine() const;

  const Node* node() const { return node_.get(); }

 private:
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

/// Parses `text` against the expression grammar with x1..xn and y1..ym in scope.
/// Throws ParseError carrying the byte offset of the problem.
Expr parse_expr(std::string_view text, int n, int m);

/// IEEE-double evaluation. Throws DomainError naming the offending node.
double eval(const Expr& e, const EvalPoint& p);

/// Exact gradient with respect to (x, y), length n+m, by forward-mode AD.
Eigen::VectorXd gradient(const Expr& e, const EvalPoint& p);

/// Exact Hessian with respect to (x, y) by hyper-dual numbers; symmetric by
/// construction (only the upper triangle is evaluated).
Eigen::MatrixXd hessian(const Expr& e, const EvalPoint& p);

// Blocks restricted to the y variables; cheaper when only the inner problem
// needs derivatives.
Eigen::VectorXd gradient_y(const Expr& e, const EvalPoint& p);
Eigen::MatrixXd hessian_yy(const Expr& e, const EvalPoint& p);

}  // namespace bec

#include "bec/expr.hpp"

#include <fmt/format.h>

#include <array>
#include <charconv>
#include <cmath>

#include "bec/error.hpp"

namespace bec {

struct Expr::Node {
  Kind kind = Kind::constant;
  double value = 0.0;
  VarKind var = VarKind::x;
  int index = 0;
  UnaryOp uop = UnaryOp::neg;
  BinaryOp bop = BinaryOp::add;
  int exponent = 0;
  std::shared_ptr<const Node> a;
  std::shared_ptr<const Node> b;
};

namespace {

const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::neg: return "-";
    case UnaryOp::sin: return "sin";
    case UnaryOp::cos: return "cos";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::sqrt: return "sqrt";
  }
  return "?";
}

const char* binary_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return " + ";
    case BinaryOp::sub: return " - ";
    case BinaryOp::mul: return " * ";
    case BinaryOp::div: return " / ";
  }
  return " ? ";
}

std::string node_string(const Expr::Node& n) {
  using K = Expr::Kind;
  switch (n.kind) {
    case K::constant: {
      std::string s = fmt::format("{}", n.value);
      return n.value < 0 || std::signbit(n.value) ? "(" + s + ")" : s;
    }
    case K::variable:
      return (n.var == VarKind::x ? "x" : "y") + std::to_string(n.index);
    case K::unary:
      if (n.uop == UnaryOp::neg) return "(-" + node_string(*n.a) + ")";
      return std::string(unary_name(n.uop)) + "(" + node_string(*n.a) + ")";
    case K::binary:
      return "(" + node_string(*n.a) + binary_symbol(n.bop) + node_string(*n.b) + ")";
    case K::power:
      return "((" + node_string(*n.a) + ")^" + std::to_string(n.exponent) + ")";
  }
  return "?";
}

bool has_variables(const Expr::Node& n) {
  switch (n.kind) {
    case Expr::Kind::constant: return false;
    case Expr::Kind::variable: return true;
    case Expr::Kind::unary:
    case Expr::Kind::power: return has_variables(*n.a);
    case Expr::Kind::binary: return has_variables(*n.a) || has_variables(*n.b);
  }
  return true;
}

bool affine(const Expr::Node& n) {
  using K = Expr::Kind;
  switch (n.kind) {
    case K::constant:
    case K::variable: return true;
    case K::unary:
      return n.uop == UnaryOp::neg ? affine(*n.a) : !has_variables(*n.a);
    case K::binary:
      switch (n.bop) {
        case BinaryOp::add:
        case BinaryOp::sub: return affine(*n.a) && affine(*n.b);
        case BinaryOp::mul:
          return (!has_variables(*n.a) && affine(*n.b)) || (affine(*n.a) && !has_variables(*n.b));
        case BinaryOp::div: return affine(*n.a) && !has_variables(*n.b);
      }
      return false;
    case K::power:
      if (n.exponent == 0) return true;
      if (n.exponent == 1) return affine(*n.a);
      return !has_variables(*n.a);
  }
  return false;
}

int max_index_of(const Expr::Node& n, VarKind kind) {
  switch (n.kind) {
    case Expr::Kind::constant: return 0;
    case Expr::Kind::variable: return n.var == kind ? n.index : 0;
    case Expr::Kind::unary:
    case Expr::Kind::power: return max_index_of(*n.a, kind);
    case Expr::Kind::binary: return std::max(max_index_of(*n.a, kind), max_index_of(*n.b, kind));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Forward-mode AD scalars.

struct Dual {
  double v = 0, d = 0;
};

// f(x + a e1 + b e2 + ab e1 e2) with e1^2 = e2^2 = 0.
struct HyperDual {
  double v = 0, a = 0, b = 0, ab = 0;
};

inline double val(double x) { return x; }
inline double val(const Dual& x) { return x.v; }
inline double val(const HyperDual& x) { return x.v; }

template <class T>
inline constexpr bool carries_derivatives = !std::is_same_v<T, double>;

// Chain rule for a scalar function with value f0 and derivatives f1, f2 at val(x).
inline double lift(double, double f0, double, double) { return f0; }
inline Dual lift(const Dual& x, double f0, double f1, double) { return {f0, f1 * x.d}; }
inline HyperDual lift(const HyperDual& x, double f0, double f1, double f2) {
  return {f0, f1 * x.a, f1 * x.b, f1 * x.ab + f2 * x.a * x.b};
}

inline Dual operator+(const Dual& p, const Dual& q) { return {p.v + q.v, p.d + q.d}; }
inline Dual operator-(const Dual& p, const Dual& q) { return {p.v - q.v, p.d - q.d}; }
inline Dual operator*(const Dual& p, const Dual& q) { return {p.v * q.v, p.d * q.v + p.v * q.d}; }
inline Dual operator-(const Dual& p) { return {-p.v, -p.d}; }

inline HyperDual operator+(const HyperDual& p, const HyperDual& q) {
  return {p.v + q.v, p.a + q.a, p.b + q.b, p.ab + q.ab};
}
inline HyperDual operator-(const HyperDual& p, const HyperDual& q) {
  return {p.v - q.v, p.a - q.a, p.b - q.b, p.ab - q.ab};
}
inline HyperDual operator*(const HyperDual& p, const HyperDual& q) {
  return {p.v * q.v, p.a * q.v + p.v * q.a, p.b * q.v + p.v * q.b,
          p.ab * q.v + p.a * q.b + p.b * q.a + p.v * q.ab};
}
inline HyperDual operator-(const HyperDual& p) { return {-p.v, -p.a, -p.b, -p.ab}; }

double ipow(double base, int k) {
  double result = 1.0;
  double factor = base;
  unsigned e = static_cast<unsigned>(k < 0 ? -k : k);
  while (e) {
    if (e & 1u) result *= factor;
    factor *= factor;
    e >>= 1u;
  }
  return k < 0 ? 1.0 / result : result;
}

[[noreturn]] void domain_error(const char* what, const Expr::Node& n) {
  throw DomainError(what, node_string(n));
}

template <class T, class Seed>
T eval_node(const Expr::Node& n, const Seed& seed) {
  using K = Expr::Kind;
  T out{};
  switch (n.kind) {
    case K::constant:
      out = T{n.value};
      break;
    case K::variable:
      out = seed(n.var, n.index - 1);
      break;
    case K::unary: {
      T x = eval_node<T>(*n.a, seed);
      double v = val(x);
      switch (n.uop) {
        case UnaryOp::neg: out = -x; break;
        case UnaryOp::sin: out = lift(x, std::sin(v), std::cos(v), -std::sin(v)); break;
        case UnaryOp::cos: out = lift(x, std::cos(v), -std::sin(v), -std::cos(v)); break;
        case UnaryOp::exp: {
          double e = std::exp(v);
          out = lift(x, e, e, e);
          break;
        }
        case UnaryOp::log:
          if (!(v > 0)) domain_error("log of a nonpositive value", n);
          out = lift(x, std::log(v), 1.0 / v, -1.0 / (v * v));
          break;
        case UnaryOp::sqrt: {
          if (v < 0) domain_error("sqrt of a negative value", n);
          if (carries_derivatives<T> && v == 0) domain_error("sqrt is not differentiable at 0", n);
          double s = std::sqrt(v);
          out = lift(x, s, v > 0 ? 0.5 / s : 0.0, v > 0 ? -0.25 / (s * v) : 0.0);
          break;
        }
      }
      break;
    }
    case K::binary: {
      T p = eval_node<T>(*n.a, seed);
      T q = eval_node<T>(*n.b, seed);
      switch (n.bop) {
        case BinaryOp::add: out = p + q; break;
        case BinaryOp::sub: out = p - q; break;
        case BinaryOp::mul: out = p * q; break;
        case BinaryOp::div: {
          double d = val(q);
          if (d == 0) domain_error("division by zero", n);
          out = p * lift(q, 1.0 / d, -1.0 / (d * d), 2.0 / (d * d * d));
          break;
        }
      }
      break;
    }
    case K::power: {
      T x = eval_node<T>(*n.a, seed);
      double v = val(x);
      int k = n.exponent;
      if (k < 0 && v == 0) domain_error("negative power of zero", n);
      double f0 = ipow(v, k);
      double f1 = k == 0 ? 0.0 : k * ipow(v, k - 1);
      double f2 = (k == 0 || k == 1) ? 0.0 : double(k) * (k - 1) * ipow(v, k - 2);
      out = lift(x, f0, f1, f2);
      break;
    }
  }
  if (!std::isfinite(val(out))) domain_error("non-finite value", n);
  return out;
}

void check_dims(const Expr& e, const EvalPoint& p) {
  if (e.max_index(VarKind::x) > p.x.size() || e.max_index(VarKind::y) > p.y.size())
    throw ValidationError("expression `" + e.to_string() + "` uses variables beyond the point dimensions (n=" +
                          std::to_string(p.x.size()) + ", m=" + std::to_string(p.y.size()) + ")");
}

double coord(const EvalPoint& p, VarKind kind, int i) { return kind == VarKind::x ? p.x[i] : p.y[i]; }

// Flat coordinate of (kind, i): x first, then y.
int flat(const EvalPoint& p, VarKind kind, int i) {
  return kind == VarKind::x ? i : static_cast<int>(p.x.size()) + i;
}

Eigen::VectorXd gradient_over(const Expr& e, const EvalPoint& p, int first, int count) {
  check_dims(e, p);
  Eigen::VectorXd g(count);
  for (int k = 0; k < count; ++k) {
    const int target = first + k;
    auto seed = [&](VarKind kind, int i) {
      return Dual{coord(p, kind, i), flat(p, kind, i) == target ? 1.0 : 0.0};
    };
    g[k] = eval_node<Dual>(*e.node(), seed).d;
  }
  return g;
}

Eigen::MatrixXd hessian_over(const Expr& e, const EvalPoint& p, int first, int count) {
  check_dims(e, p);
  Eigen::MatrixXd h(count, count);
  for (int r = 0; r < count; ++r) {
    for (int c = r; c < count; ++c) {
      const int ta = first + r, tb = first + c;
      auto seed = [&](VarKind kind, int i) {
        const int f = flat(p, kind, i);
        return HyperDual{coord(p, kind, i), f == ta ? 1.0 : 0.0, f == tb ? 1.0 : 0.0, 0.0};
      };
      h(r, c) = h(c, r) = eval_node<HyperDual>(*e.node(), seed).ab;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  Parser(std::string_view text, int n, int m) : s_(text), n_(n), m_(m) {}

  Expr parse() {
    Expr e = expr();
    skip();
    if (pos_ != s_.size()) fail(std::string("unexpected character '") + s_[pos_] + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(pos_, what); }

  void skip() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r'))
      ++pos_;
  }

  bool peek(char c) {
    skip();
    return pos_ < s_.size() && s_[pos_] == c;
  }

  static bool is_digit(char c) { return c >= '0' && c <= '9'; }
  static bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }

  Expr expr() {
    Expr lhs = term();
    for (;;) {
      if (peek('+')) {
        ++pos_;
        lhs = Expr::binary(BinaryOp::add, lhs, term());
      } else if (peek('-')) {
        ++pos_;
        lhs = Expr::binary(BinaryOp::sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }

  Expr term() {
    Expr lhs = factor();
    for (;;) {
      if (peek('*')) {
        ++pos_;
        lhs = Expr::binary(BinaryOp::mul, lhs, factor());
      } else if (peek('/')) {
        ++pos_;
        lhs = Expr::binary(BinaryOp::div, lhs, factor());
      } else {
        return lhs;
      }
    }
  }

  // Unary minus binds looser than '^', so -a^2 == -(a^2).
  Expr factor() {
    if (peek('-')) {
      ++pos_;
      return Expr::unary(UnaryOp::neg, factor());
    }
    Expr base = atom();
    if (peek('^')) {
      ++pos_;
      skip();
      return Expr::power(base, integer());
    }
    return base;
  }

  int integer() {
    const std::size_t start = pos_;
    bool negative = false;
    if (pos_ < s_.size() && (s_[pos_] == '-' || s_[pos_] == '+')) {
      negative = s_[pos_] == '-';
      ++pos_;
    }
    const std::size_t digits = pos_;
    while (pos_ < s_.size() && is_digit(s_[pos_])) ++pos_;
    if (pos_ == digits) {
      pos_ = start;
      fail("exponent must be an integer literal");
    }
    if (pos_ < s_.size() && (s_[pos_] == '.' || s_[pos_] == 'e' || s_[pos_] == 'E')) {
      pos_ = start;
      fail("exponent must be an integer literal");
    }
    int value = 0;
    auto [ptr, ec] = std::from_chars(s_.data() + digits, s_.data() + pos_, value);
    if (ec != std::errc()) {
      pos_ = start;
      fail("exponent out of range");
    }
    return negative ? -value : value;
  }

  Expr number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && is_digit(s_[pos_])) ++pos_;
    if (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      while (pos_ < s_.size() && is_digit(s_[pos_])) ++pos_;
    }
    if (pos_ == start + 1 && s_[start] == '.') {
      pos_ = start;
      fail("malformed number");
    }
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
      std::size_t exp_digits = pos_;
      while (pos_ < s_.size() && is_digit(s_[pos_])) ++pos_;
      if (pos_ == exp_digits) {
        pos_ = save;
        fail("malformed exponent in number");
      }
    }
    double value = 0;
    auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, value);
    if (ec != std::errc() || !std::isfinite(value)) {
      pos_ = start;
      fail("number out of range");
    }
    return Expr::constant(value);
  }

  Expr atom() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      Expr inner = expr();
      if (!peek(')')) fail("expected ')'");
      ++pos_;
      return inner;
    }
    if (c == '-') {
      ++pos_;
      return Expr::unary(UnaryOp::neg, atom());
    }
    if (is_digit(c) || c == '.') return number();
    if (is_alpha(c)) return identifier();
    fail(std::string("unexpected character '") + c + "'");
  }

  Expr identifier() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && is_alpha(s_[pos_])) ++pos_;
    const std::string_view letters = s_.substr(start, pos_ - start);
    const std::size_t digit_start = pos_;
    while (pos_ < s_.size() && is_digit(s_[pos_])) ++pos_;
    const std::string_view digits = s_.substr(digit_start, pos_ - digit_start);

    if ((letters == "x" || letters == "y") && !digits.empty()) {
      if (pos_ < s_.size() && is_alpha(s_[pos_])) {
        pos_ = start;
        fail("unknown variable");
      }
      int index = 0;
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
      const bool is_x = letters == "x";
      const int limit = is_x ? n_ : m_;
      if (ec != std::errc() || index < 1 || index > limit) {
        pos_ = start;
        fail(std::string("variable index out of range: ") + std::string(letters) + std::string(digits) + " (" +
             (is_x ? "n" : "m") + "=" + std::to_string(limit) + ")");
      }
      return Expr::variable(is_x ? VarKind::x : VarKind::y, index);
    }
    if (digits.empty()) {
      static constexpr std::array<std::pair<std::string_view, UnaryOp>, 5> funcs{{
          {"sin", UnaryOp::sin}, {"cos", UnaryOp::cos}, {"exp", UnaryOp::exp},
          {"log", UnaryOp::log}, {"sqrt", UnaryOp::sqrt}}};
      for (auto [name, op] : funcs) {
        if (letters == name) {
          if (!peek('(')) fail("expected '(' after " + std::string(name));
          ++pos_;
          Expr arg = expr();
          if (!peek(')')) fail("expected ')'");
          ++pos_;
          return Expr::unary(op, arg);
        }
      }
    }
    pos_ = start;
    fail("unknown variable or function '" + std::string(s_.substr(start, pos_ + letters.size() + digits.size() - start)) +
         "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int n_, m_;
};

}  // namespace

// ---------------------------------------------------------------------------

Expr::Expr() : Expr(constant(0.0)) {}

Expr Expr::constant(double value) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::constant;
  n->value = value;
  return Expr(std::move(n));
}

Expr Expr::variable(VarKind kind, int index) {
  if (index < 1) throw ValidationError("variable indices are 1-based");
  auto n = std::make_shared<Node>();
  n->kind = Kind::variable;
  n->var = kind;
  n->index = index;
  return Expr(std::move(n));
}

Expr Expr::unary(UnaryOp op, Expr arg) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::unary;
  n->uop = op;
  n->a = std::move(arg.node_);
  return Expr(std::move(n));
}

Expr Expr::binary(BinaryOp op, Expr lhs, Expr rhs) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::binary;
  n->bop = op;
  n->a = std::move(lhs.node_);
  n->b = std::move(rhs.node_);
  return Expr(std::move(n));
}

Expr Expr::power(Expr base, int exponent) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::power;
  n->exponent = exponent;
  n->a = std::move(base.node_);
  return Expr(std::move(n));
}

Expr::Kind Expr::kind() const { return node_->kind; }
double Expr::constant_value() const { return node_->value; }
VarKind Expr::var_kind() const { return node_->var; }
int Expr::var_index() const { return node_->index; }
UnaryOp Expr::unary_op() const { return node_->uop; }
BinaryOp Expr::binary_op() const { return node_->bop; }
int Expr::exponent() const { return node_->exponent; }
Expr Expr::lhs() const { return Expr(node_->a); }
Expr Expr::rhs() const { return Expr(node_->b); }

std::string Expr::to_string() const { return node_string(*node_); }
int Expr::max_index(VarKind kind) const { return max_index_of(*node_, kind); }
bool Expr::is_affine() const { return affine(*node_); }

Expr parse_expr(std::string_view text, int n, int m) { return Parser(text, n, m).parse(); }

double eval(const Expr& e, const EvalPoint& p) {
  check_dims(e, p);
  auto seed = [&](VarKind kind, int i) { return coord(p, kind, i); };
  return eval_node<double>(*e.node(), seed);
}

Eigen::VectorXd gradient(const Expr& e, const EvalPoint& p) {
  return gradient_over(e, p, 0, static_cast<int>(p.x.size() + p.y.size()));
}

Eigen::MatrixXd hessian(const Expr& e, const EvalPoint& p) {
  return hessian_over(e, p, 0, static_cast<int>(p.x.size() + p.y.size()));
}

Eigen::VectorXd gradient_y(const Expr& e, const EvalPoint& p) {
  return gradient_over(e, p, static_cast<int>(p.x.size()), static_cast<int>(p.y.size()));
}

Eigen::MatrixXd hessian_yy(const Expr& e, const EvalPoint& p) {
  return hessian_over(e, p, static_cast<int>(p.x.size()), static_cast<int>(p.y.size()));
}

}  // namespace bec

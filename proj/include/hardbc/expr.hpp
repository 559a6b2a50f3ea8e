#pragma once
// Symbolic mini-language for boundary data and coefficients.
//
// Grammar (EBNF):
//   expr   := term (('+' | '-') term)*
//   term   := factor (('*' | '/') factor)*
//   factor := '-' factor | base ('^' factor)?
//   base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
//   IDENT  := x | y | alpha | beta | pi | sin | cos | exp | sqrt
//
// '^' is right-associative and binds tighter than unary minus, so
// "2^3^2" = 512 and "-x^2" = -(x^2).  "pi" folds to a numeric literal at
// parse time.  All errors carry the byte offset into the source text.

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hardbc::expr {

class ExprError : public std::runtime_error {
public:
  ExprError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

enum class Var : std::uint8_t { x = 0, y = 1, alpha = 2, beta = 3 };
enum class Unary : std::uint8_t { neg, sin, cos, exp, sqrt };
enum class Binary : std::uint8_t { add, sub, mul, div, pow };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  enum class Kind : std::uint8_t { number, variable, unary, binary } kind;
  double value = 0.0;      // Kind::number
  Var var = Var::x;        // Kind::variable
  Unary uop = Unary::neg;  // Kind::unary
  Binary bop = Binary::add;// Kind::binary
  NodePtr a, b;
};

/// Immutable expression handle (cheap to copy, shared subtrees allowed).
class Expr {
public:
  Expr() = default;
  explicit Expr(NodePtr n) : node_(std::move(n)) {}
  [[nodiscard]] const Node& node() const { return *node_; }
  [[nodiscard]] const NodePtr& ptr() const { return node_; }
  [[nodiscard]] bool valid() const { return node_ != nullptr; }
  [[nodiscard]] bool is_number() const {
    return node_ && node_->kind == Node::Kind::number;
  }
  [[nodiscard]] double number() const { return node_->value; }

private:
  NodePtr node_;
};

// -- smart constructors (light constant folding, no deep rewriting) ----------
Expr num(double v);
Expr var(Var v);
Expr neg(const Expr& a);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr exp(const Expr& a);
Expr sqrt(const Expr& a);
Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr div(const Expr& a, const Expr& b);
Expr pow(const Expr& a, const Expr& b);

/// Parse source text; throws ExprError with a byte offset on malformed input.
Expr parse(std::string_view text);

/// Variable bindings for evaluation; unbound variables that occur in the
/// expression raise ExprError naming the variable.
struct Env {
  std::optional<double> x, y, alpha, beta;
  [[nodiscard]] static Env xy(double xv, double yv) {
    return Env{xv, yv, std::nullopt, std::nullopt};
  }
  [[nodiscard]] static Env full(double xv, double yv, double av, double bv) {
    return Env{xv, yv, av, bv};
  }
};

/// Evaluate; throws ExprError on unbound variables or a non-finite result.
double eval(const Expr& e, const Env& env);

/// Symbolic partial derivative.  pow is differentiable for a numeric exponent
/// or a numeric base; a variable base with a variable exponent throws
/// (the language has no logarithm to express it).
Expr diff(const Expr& e, Var v);

/// Parseable text form; parse(to_string(e)) evaluates identically to e.
std::string to_string(const Expr& e);

/// Bitmask of variables occurring in e (bit = static_cast<int>(Var)).
unsigned vars_used(const Expr& e);

[[nodiscard]] std::string_view var_name(Var v);

/// Flat stack-machine form for fast repeated evaluation over many points.
class Program {
public:
  Program() = default;
  /// alpha/beta may be NaN if the expression does not reference them.
  [[nodiscard]] double eval(double x, double y, double alpha, double beta) const;
  [[nodiscard]] bool empty() const { return code_.empty(); }

private:
  friend Program compile(const Expr& e);
  struct Instr {
    enum class Op : std::uint8_t {
      push_const, push_var, add, sub, mul, div, pow, neg, sin, cos, exp, sqrt
    } op;
    double value = 0.0;
    Var var = Var::x;
  };
  std::vector<Instr> code_;
  std::size_t stack_need_ = 0;
};

Program compile(const Expr& e);

}  // namespace hardbc::expr

#include "hardbc/expr.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace hardbc::expr {

namespace {

NodePtr make(Node n) { return std::make_shared<const Node>(std::move(n)); }

bool is_num(const Expr& e, double v) { return e.is_number() && e.number() == v; }

}  // namespace

// ---- smart constructors -----------------------------------------------------

Expr num(double v) {
  Node n;
  n.kind = Node::Kind::number;
  n.value = v;
  return Expr(make(std::move(n)));
}

Expr var(Var v) {
  Node n;
  n.kind = Node::Kind::variable;
  n.var = v;
  return Expr(make(std::move(n)));
}

static Expr unary(Unary op, const Expr& a) {
  if (a.is_number()) {
    const double x = a.number();
    switch (op) {
      case Unary::neg: return num(-x);
      case Unary::sin: return num(std::sin(x));
      case Unary::cos: return num(std::cos(x));
      case Unary::exp: return num(std::exp(x));
      case Unary::sqrt:
        if (x >= 0) return num(std::sqrt(x));
        break;  // keep symbolic; eval will report non-finite
    }
  }
  Node n;
  n.kind = Node::Kind::unary;
  n.uop = op;
  n.a = a.ptr();
  return Expr(make(std::move(n)));
}

Expr neg(const Expr& a) {
  if (a.node().kind == Node::Kind::unary && a.node().uop == Unary::neg)
    return Expr(a.node().a);
  return unary(Unary::neg, a);
}
Expr sin(const Expr& a) { return unary(Unary::sin, a); }
Expr cos(const Expr& a) { return unary(Unary::cos, a); }
Expr exp(const Expr& a) { return unary(Unary::exp, a); }
Expr sqrt(const Expr& a) { return unary(Unary::sqrt, a); }

static Expr binary(Binary op, const Expr& a, const Expr& b) {
  Node n;
  n.kind = Node::Kind::binary;
  n.bop = op;
  n.a = a.ptr();
  n.b = b.ptr();
  return Expr(make(std::move(n)));
}

Expr add(const Expr& a, const Expr& b) {
  if (is_num(a, 0)) return b;
  if (is_num(b, 0)) return a;
  if (a.is_number() && b.is_number()) return num(a.number() + b.number());
  return binary(Binary::add, a, b);
}

Expr sub(const Expr& a, const Expr& b) {
  if (is_num(b, 0)) return a;
  if (is_num(a, 0)) return neg(b);
  if (a.is_number() && b.is_number()) return num(a.number() - b.number());
  return binary(Binary::sub, a, b);
}

Expr mul(const Expr& a, const Expr& b) {
  if (is_num(a, 0) || is_num(b, 0)) return num(0);
  if (is_num(a, 1)) return b;
  if (is_num(b, 1)) return a;
  if (a.is_number() && b.is_number()) return num(a.number() * b.number());
  return binary(Binary::mul, a, b);
}

Expr div(const Expr& a, const Expr& b) {
  if (is_num(b, 1)) return a;
  if (is_num(a, 0) && !is_num(b, 0)) return num(0);
  if (a.is_number() && b.is_number() && b.number() != 0)
    return num(a.number() / b.number());
  return binary(Binary::div, a, b);
}

Expr pow(const Expr& a, const Expr& b) {
  if (is_num(b, 0)) return num(1);
  if (is_num(b, 1)) return a;
  if (a.is_number() && b.is_number()) return num(std::pow(a.number(), b.number()));
  return binary(Binary::pow, a, b);
}

// ---- lexer / parser ---------------------------------------------------------

namespace {

struct Token {
  enum class Kind : std::uint8_t {
    number, ident, lparen, rparen, plus, minus, star, slash, caret, end
  } kind;
  std::size_t offset = 0;
  double value = 0.0;      // number
  std::string_view text;   // ident
};

class Lexer {
public:
  explicit Lexer(std::string_view src) : src_(src) { advance(); }
  [[nodiscard]] const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

private:
  void advance() {
    while (pos_ < src_.size() &&
           (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\n' ||
            src_[pos_] == '\r'))
      ++pos_;
    tok_.offset = pos_;
    if (pos_ >= src_.size()) {
      tok_.kind = Token::Kind::end;
      return;
    }
    const char c = src_[pos_];
    switch (c) {
      case '(': tok_.kind = Token::Kind::lparen; ++pos_; return;
      case ')': tok_.kind = Token::Kind::rparen; ++pos_; return;
      case '+': tok_.kind = Token::Kind::plus; ++pos_; return;
      case '-': tok_.kind = Token::Kind::minus; ++pos_; return;
      case '*': tok_.kind = Token::Kind::star; ++pos_; return;
      case '/': tok_.kind = Token::Kind::slash; ++pos_; return;
      case '^': tok_.kind = Token::Kind::caret; ++pos_; return;
      default: break;
    }
    if ((c >= '0' && c <= '9') || c == '.') {
      lex_number();
      return;
    }
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') {
      std::size_t end = pos_;
      while (end < src_.size() &&
             ((src_[end] >= 'a' && src_[end] <= 'z') ||
              (src_[end] >= 'A' && src_[end] <= 'Z') ||
              (src_[end] >= '0' && src_[end] <= '9') || src_[end] == '_'))
        ++end;
      tok_.kind = Token::Kind::ident;
      tok_.text = src_.substr(pos_, end - pos_);
      pos_ = end;
      return;
    }
    throw ExprError(std::string("unexpected character '") + c + "'", pos_);
  }

  void lex_number() {
    const char* first = src_.data() + pos_;
    const char* last = src_.data() + src_.size();
    double v = 0.0;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || p == first)
      throw ExprError("malformed number", pos_);
    // Reject forms like "1.2.3": from_chars stops at the second '.', which
    // would otherwise lex as a fresh (malformed) number token later.
    std::size_t end = static_cast<std::size_t>(p - src_.data());
    if (end < src_.size() && src_[end] == '.')
      throw ExprError("malformed number", pos_);
    tok_.kind = Token::Kind::number;
    tok_.value = v;
    pos_ = end;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  Token tok_;
};

class Parser {
public:
  explicit Parser(std::string_view src) : lex_(src) {}

  Expr parse_all() {
    Expr e = parse_expr();
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::end)
      throw ExprError("unexpected trailing input", t.offset);
    return e;
  }

private:
  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      const Token& t = lex_.peek();
      if (t.kind == Token::Kind::plus) {
        lex_.take();
        e = binary(Binary::add, e, parse_term());
      } else if (t.kind == Token::Kind::minus) {
        lex_.take();
        e = binary(Binary::sub, e, parse_term());
      } else {
        return e;
      }
    }
  }

  Expr parse_term() {
    Expr e = parse_factor();
    for (;;) {
      const Token& t = lex_.peek();
      if (t.kind == Token::Kind::star) {
        lex_.take();
        e = binary(Binary::mul, e, parse_factor());
      } else if (t.kind == Token::Kind::slash) {
        lex_.take();
        e = binary(Binary::div, e, parse_factor());
      } else {
        return e;
      }
    }
  }

  Expr parse_factor() {
    if (lex_.peek().kind == Token::Kind::minus) {
      lex_.take();
      return neg(parse_factor());
    }
    Expr base = parse_base();
    if (lex_.peek().kind == Token::Kind::caret) {
      lex_.take();
      return binary(Binary::pow, base, parse_factor());  // right-assoc
    }
    return base;
  }

  Expr parse_base() {
    Token t = lex_.take();
    switch (t.kind) {
      case Token::Kind::number:
        return num(t.value);
      case Token::Kind::lparen: {
        Expr e = parse_expr();
        expect_rparen();
        return e;
      }
      case Token::Kind::ident:
        return parse_ident(t);
      default:
        throw ExprError("expected number, identifier or '('", t.offset);
    }
  }

  Expr parse_ident(const Token& t) {
    static constexpr std::array<std::pair<std::string_view, Var>, 4> kVars{
        {{"x", Var::x}, {"y", Var::y}, {"alpha", Var::alpha}, {"beta", Var::beta}}};
    static constexpr std::array<std::pair<std::string_view, Unary>, 4> kFuncs{
        {{"sin", Unary::sin}, {"cos", Unary::cos}, {"exp", Unary::exp},
         {"sqrt", Unary::sqrt}}};
    if (t.text == "pi") {
      if (lex_.peek().kind == Token::Kind::lparen)
        throw ExprError("'pi' is a constant, not a function", lex_.peek().offset);
      return num(M_PI);
    }
    for (auto [name, v] : kVars) {
      if (t.text == name) {
        if (lex_.peek().kind == Token::Kind::lparen)
          throw ExprError("'" + std::string(name) + "' is a variable, not a function",
                          lex_.peek().offset);
        return var(v);
      }
    }
    for (auto [name, f] : kFuncs) {
      if (t.text == name) {
        if (lex_.peek().kind != Token::Kind::lparen)
          throw ExprError("expected '(' after function '" + std::string(name) + "'",
                          lex_.peek().offset);
        lex_.take();
        Expr arg = parse_expr();
        expect_rparen();
        return unary(f, arg);
      }
    }
    throw ExprError("unknown identifier '" + std::string(t.text) + "'", t.offset);
  }

  void expect_rparen() {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::rparen)
      throw ExprError("expected ')'", t.offset);
    lex_.take();
  }

  Lexer lex_;
};

}  // namespace

Expr parse(std::string_view text) { return Parser(text).parse_all(); }

// ---- evaluation -------------------------------------------------------------

namespace {

double lookup(const Env& env, Var v) {
  const std::optional<double>* slot = nullptr;
  switch (v) {
    case Var::x: slot = &env.x; break;
    case Var::y: slot = &env.y; break;
    case Var::alpha: slot = &env.alpha; break;
    case Var::beta: slot = &env.beta; break;
  }
  if (!slot->has_value())
    throw ExprError("unbound variable '" + std::string(var_name(v)) + "'", 0);
  return **slot;
}

double eval_node(const Node& n, const Env& env) {
  switch (n.kind) {
    case Node::Kind::number: return n.value;
    case Node::Kind::variable: return lookup(env, n.var);
    case Node::Kind::unary: {
      const double a = eval_node(*n.a, env);
      switch (n.uop) {
        case Unary::neg: return -a;
        case Unary::sin: return std::sin(a);
        case Unary::cos: return std::cos(a);
        case Unary::exp: return std::exp(a);
        case Unary::sqrt: return std::sqrt(a);
      }
      break;
    }
    case Node::Kind::binary: {
      const double a = eval_node(*n.a, env);
      const double b = eval_node(*n.b, env);
      switch (n.bop) {
        case Binary::add: return a + b;
        case Binary::sub: return a - b;
        case Binary::mul: return a * b;
        case Binary::div: return a / b;
        case Binary::pow: return std::pow(a, b);
      }
      break;
    }
  }
  return 0.0;  // unreachable
}

}  // namespace

double eval(const Expr& e, const Env& env) {
  if (!e.valid()) throw ExprError("empty expression", 0);
  const double v = eval_node(e.node(), env);
  if (!std::isfinite(v)) throw ExprError("non-finite result", 0);
  return v;
}

// ---- differentiation --------------------------------------------------------

Expr diff(const Expr& e, Var v) {
  const Node& n = e.node();
  switch (n.kind) {
    case Node::Kind::number:
      return num(0);
    case Node::Kind::variable:
      return num(n.var == v ? 1 : 0);
    case Node::Kind::unary: {
      const Expr a(n.a);
      const Expr da = diff(a, v);
      switch (n.uop) {
        case Unary::neg: return neg(da);
        case Unary::sin: return mul(cos(a), da);
        case Unary::cos: return neg(mul(sin(a), da));
        case Unary::exp: return mul(exp(a), da);
        case Unary::sqrt: return div(da, mul(num(2), sqrt(a)));
      }
      break;
    }
    case Node::Kind::binary: {
      const Expr a(n.a), b(n.b);
      switch (n.bop) {
        case Binary::add: return add(diff(a, v), diff(b, v));
        case Binary::sub: return sub(diff(a, v), diff(b, v));
        case Binary::mul: return add(mul(diff(a, v), b), mul(a, diff(b, v)));
        case Binary::div:
          return div(sub(mul(diff(a, v), b), mul(a, diff(b, v))), mul(b, b));
        case Binary::pow: {
          if (b.is_number()) {
            const double p = b.number();
            return mul(mul(num(p), pow(a, num(p - 1))), diff(a, v));
          }
          if (a.is_number()) {
            const double c = a.number();
            if (c <= 0)
              throw ExprError("derivative of pow with non-positive numeric base", 0);
            return mul(mul(num(std::log(c)), pow(a, b)), diff(b, v));
          }
          throw ExprError(
              "derivative of pow with variable base and exponent is not "
              "expressible in this language",
              0);
        }
      }
      break;
    }
  }
  return num(0);  // unreachable
}

// ---- printing ---------------------------------------------------------------

namespace {

std::string fmt_number(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

bool is_atom(const Node& n) {
  if (n.kind == Node::Kind::variable) return true;
  if (n.kind == Node::Kind::number) return n.value >= 0;
  if (n.kind == Node::Kind::unary && n.uop != Unary::neg) return true;  // call
  return false;
}

int prec(const Node& n) {
  switch (n.kind) {
    case Node::Kind::number: return n.value >= 0 ? 5 : 0;
    case Node::Kind::variable: return 5;
    case Node::Kind::unary: return n.uop == Unary::neg ? 3 : 5;
    case Node::Kind::binary:
      switch (n.bop) {
        case Binary::add:
        case Binary::sub: return 1;
        case Binary::mul:
        case Binary::div: return 2;
        case Binary::pow: return 4;
      }
  }
  return 0;
}

void print_node(const Node& n, std::string& out);

void print_child(const Node& c, int min_prec, std::string& out) {
  if (prec(c) < min_prec) {
    out += '(';
    print_node(c, out);
    out += ')';
  } else {
    print_node(c, out);
  }
}

void print_node(const Node& n, std::string& out) {
  switch (n.kind) {
    case Node::Kind::number:
      out += fmt_number(n.value);
      return;
    case Node::Kind::variable:
      out += var_name(n.var);
      return;
    case Node::Kind::unary:
      switch (n.uop) {
        case Unary::neg:
          out += '-';
          print_child(*n.a, 4, out);  // bind tighter than mul, looser than pow
          return;
        case Unary::sin: out += "sin("; break;
        case Unary::cos: out += "cos("; break;
        case Unary::exp: out += "exp("; break;
        case Unary::sqrt: out += "sqrt("; break;
      }
      print_node(*n.a, out);
      out += ')';
      return;
    case Node::Kind::binary:
      switch (n.bop) {
        case Binary::add:
          print_child(*n.a, 1, out);
          out += '+';
          print_child(*n.b, 2, out);
          return;
        case Binary::sub:
          print_child(*n.a, 1, out);
          out += '-';
          print_child(*n.b, 2, out);
          return;
        case Binary::mul:
          print_child(*n.a, 2, out);
          out += '*';
          print_child(*n.b, 3, out);
          return;
        case Binary::div:
          print_child(*n.a, 2, out);
          out += '/';
          print_child(*n.b, 3, out);
          return;
        case Binary::pow:
          if (is_atom(*n.a)) {
            print_node(*n.a, out);
          } else {
            out += '(';
            print_node(*n.a, out);
            out += ')';
          }
          out += '^';
          // right-assoc: a^b^c prints without parens; -b allowed after '^'
          print_child(*n.b, 3, out);
          return;
      }
  }
}

}  // namespace

std::string to_string(const Expr& e) {
  std::string out;
  print_node(e.node(), out);
  return out;
}

unsigned vars_used(const Expr& e) {
  const Node& n = e.node();
  switch (n.kind) {
    case Node::Kind::number: return 0;
    case Node::Kind::variable: return 1u << static_cast<unsigned>(n.var);
    case Node::Kind::unary: return vars_used(Expr(n.a));
    case Node::Kind::binary: return vars_used(Expr(n.a)) | vars_used(Expr(n.b));
  }
  return 0;
}

std::string_view var_name(Var v) {
  switch (v) {
    case Var::x: return "x";
    case Var::y: return "y";
    case Var::alpha: return "alpha";
    case Var::beta: return "beta";
  }
  return "?";
}

// ---- compiled form ----------------------------------------------------------

Program compile(const Expr& e) {
  Program p;
  struct Emitter {
    std::vector<Program::Instr>& code;
    std::size_t depth = 0, max_depth = 0;
    void walk(const Node& n) {
      using Op = Program::Instr::Op;
      switch (n.kind) {
        case Node::Kind::number:
          code.push_back({Op::push_const, n.value, Var::x});
          bump(1);
          return;
        case Node::Kind::variable:
          code.push_back({Op::push_var, 0.0, n.var});
          bump(1);
          return;
        case Node::Kind::unary:
          walk(*n.a);
          switch (n.uop) {
            case Unary::neg: code.push_back({Op::neg, 0, Var::x}); break;
            case Unary::sin: code.push_back({Op::sin, 0, Var::x}); break;
            case Unary::cos: code.push_back({Op::cos, 0, Var::x}); break;
            case Unary::exp: code.push_back({Op::exp, 0, Var::x}); break;
            case Unary::sqrt: code.push_back({Op::sqrt, 0, Var::x}); break;
          }
          return;
        case Node::Kind::binary:
          walk(*n.a);
          walk(*n.b);
          switch (n.bop) {
            case Binary::add: code.push_back({Op::add, 0, Var::x}); break;
            case Binary::sub: code.push_back({Op::sub, 0, Var::x}); break;
            case Binary::mul: code.push_back({Op::mul, 0, Var::x}); break;
            case Binary::div: code.push_back({Op::div, 0, Var::x}); break;
            case Binary::pow: code.push_back({Op::pow, 0, Var::x}); break;
          }
          depth--;  // two pops, one push
          return;
      }
    }
    void bump(std::size_t k) {
      depth += k;
      max_depth = std::max(max_depth, depth);
    }
  } em{p.code_};
  em.walk(e.node());
  p.stack_need_ = std::max<std::size_t>(em.max_depth, 4);
  if (p.stack_need_ > 64)
    throw ExprError("expression too deep to compile", 0);
  return p;
}

double Program::eval(double x, double y, double alpha, double beta) const {
  double stack[64];
  std::size_t sp = 0;
  for (const Instr& in : code_) {
    using Op = Instr::Op;
    switch (in.op) {
      case Op::push_const: stack[sp++] = in.value; break;
      case Op::push_var:
        switch (in.var) {
          case Var::x: stack[sp++] = x; break;
          case Var::y: stack[sp++] = y; break;
          case Var::alpha: stack[sp++] = alpha; break;
          case Var::beta: stack[sp++] = beta; break;
        }
        break;
      case Op::neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
      case Op::cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
      case Op::exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
      case Op::sqrt: stack[sp - 1] = std::sqrt(stack[sp - 1]); break;
      case Op::add: stack[sp - 2] += stack[sp - 1]; --sp; break;
      case Op::sub: stack[sp - 2] -= stack[sp - 1]; --sp; break;
      case Op::mul: stack[sp - 2] *= stack[sp - 1]; --sp; break;
      case Op::div: stack[sp - 2] /= stack[sp - 1]; --sp; break;
      case Op::pow:
        stack[sp - 2] = std::pow(stack[sp - 2], stack[sp - 1]);
        --sp;
        break;
    }
  }
  return sp ? stack[sp - 1] : 0.0;
}

}  // namespace hardbc::expr

#pragma once

// Small arithmetic expression language for user metrics and conformal bumps.
// Grammar: sums/products/quotients/powers of numbers, variables x0..x9
// (u0..u9 accepted as aliases), the constant pi, and the unary functions
// sin, cos, exp, log, sqrt. Expressions can be differentiated symbolically.

#include <cctype>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "cmc/common.hpp"

namespace cmc {

class ExprProgram;

class Expr {
  friend class ExprProgram;

 public:
  enum class Op { num, var, add, sub, mul, div, pow, neg, sin, cos, exp, log, sqrt };

  Expr() : node_(make_num(0.0)) {}

  static Expr parse(const std::string& text) {
    Parser p{normalize(text), 0};
    auto n = p.parse_sum();
    p.skip_ws();
    require(p.pos == p.src.size(), "unexpected trailing input in expression '" + text + "'");
    return Expr(n);
  }
  static Expr constant(double v) { return Expr(make_num(v)); }
  static Expr variable(int i) { return Expr(make_var(i)); }

  double eval(const Vec& x) const { return eval_node(*node_, x); }

  Expr derivative(int var) const { return Expr(diff(node_, var)); }

  /// Largest variable index referenced, or -1.
  int max_variable() const { return max_var(*node_); }

 private:
  struct Node;
  using P = std::shared_ptr<const Node>;
  struct Node {
    Op op;
    double value = 0.0;
    int var = -1;
    P a, b;
  };

  explicit Expr(P n) : node_(std::move(n)) {}
  P node_;

  static P make_num(double v) { return std::make_shared<Node>(Node{Op::num, v, -1, nullptr, nullptr}); }
  static P make_var(int i) { return std::make_shared<Node>(Node{Op::var, 0.0, i, nullptr, nullptr}); }
  static bool is_num(const P& n, double v) { return n->op == Op::num && n->value == v; }

  static P bin(Op op, P a, P b) {
    if (a->op == Op::num && b->op == Op::num && op != Op::pow) {
      double x = a->value, y = b->value;
      switch (op) {
        case Op::add: return make_num(x + y);
        case Op::sub: return make_num(x - y);
        case Op::mul: return make_num(x * y);
        case Op::div: return make_num(x / y);
        default: break;
      }
    }
    switch (op) {
      case Op::add:
        if (is_num(a, 0)) return b;
        if (is_num(b, 0)) return a;
        break;
      case Op::sub:
        if (is_num(b, 0)) return a;
        if (is_num(a, 0)) return un(Op::neg, b);
        break;
      case Op::mul:
        if (is_num(a, 0) || is_num(b, 0)) return make_num(0.0);
        if (is_num(a, 1)) return b;
        if (is_num(b, 1)) return a;
        break;
      case Op::div:
        if (is_num(a, 0)) return make_num(0.0);
        if (is_num(b, 1)) return a;
        break;
      case Op::pow:
        if (is_num(b, 0)) return make_num(1.0);
        if (is_num(b, 1)) return a;
        break;
      default: break;
    }
    return std::make_shared<Node>(Node{op, 0.0, -1, std::move(a), std::move(b)});
  }
  static P un(Op op, P a) {
    if (op == Op::neg && a->op == Op::num) return make_num(-a->value);
    return std::make_shared<Node>(Node{op, 0.0, -1, std::move(a), nullptr});
  }

  static double eval_node(const Node& n, const Vec& x) {
    switch (n.op) {
      case Op::num: return n.value;
      case Op::var:
        require(n.var < x.size(), "expression variable x" + std::to_string(n.var) + " out of range");
        return x[n.var];
      case Op::add: return eval_node(*n.a, x) + eval_node(*n.b, x);
      case Op::sub: return eval_node(*n.a, x) - eval_node(*n.b, x);
      case Op::mul: return eval_node(*n.a, x) * eval_node(*n.b, x);
      case Op::div: return eval_node(*n.a, x) / eval_node(*n.b, x);
      case Op::pow: {
        double base = eval_node(*n.a, x);
        if (n.b->op == Op::num) {
          double e = n.b->value;
          if (e == std::round(e) && std::abs(e) <= 16) {
            int k = static_cast<int>(e);
            double r = 1.0;
            for (int i = 0; i < std::abs(k); ++i) r *= base;
            return k < 0 ? 1.0 / r : r;
          }
        }
        return std::pow(base, eval_node(*n.b, x));
      }
      case Op::neg: return -eval_node(*n.a, x);
      case Op::sin: return std::sin(eval_node(*n.a, x));
      case Op::cos: return std::cos(eval_node(*n.a, x));
      case Op::exp: return std::exp(eval_node(*n.a, x));
      case Op::log: return std::log(eval_node(*n.a, x));
      case Op::sqrt: return std::sqrt(eval_node(*n.a, x));
    }
    return 0.0;
  }

  static int max_var(const Node& n) {
    int m = n.op == Op::var ? n.var : -1;
    if (n.a) m = std::max(m, max_var(*n.a));
    if (n.b) m = std::max(m, max_var(*n.b));
    return m;
  }

  static P diff(const P& n, int v) {
    switch (n->op) {
      case Op::num: return make_num(0.0);
      case Op::var: return make_num(n->var == v ? 1.0 : 0.0);
      case Op::add: return bin(Op::add, diff(n->a, v), diff(n->b, v));
      case Op::sub: return bin(Op::sub, diff(n->a, v), diff(n->b, v));
      case Op::mul:
        return bin(Op::add, bin(Op::mul, diff(n->a, v), n->b), bin(Op::mul, n->a, diff(n->b, v)));
      case Op::div: {
        auto num = bin(Op::sub, bin(Op::mul, diff(n->a, v), n->b), bin(Op::mul, n->a, diff(n->b, v)));
        return bin(Op::div, num, bin(Op::pow, n->b, make_num(2.0)));
      }
      case Op::pow: {
        if (n->b->op == Op::num) {
          double e = n->b->value;
          return bin(Op::mul, bin(Op::mul, make_num(e), bin(Op::pow, n->a, make_num(e - 1.0))),
                     diff(n->a, v));
        }
        // d(a^b) = a^b (b' log a + b a'/a)
        auto t1 = bin(Op::mul, diff(n->b, v), un(Op::log, n->a));
        auto t2 = bin(Op::div, bin(Op::mul, n->b, diff(n->a, v)), n->a);
        return bin(Op::mul, n, bin(Op::add, t1, t2));
      }
      case Op::neg: return un(Op::neg, diff(n->a, v));
      case Op::sin: return bin(Op::mul, un(Op::cos, n->a), diff(n->a, v));
      case Op::cos: return un(Op::neg, bin(Op::mul, un(Op::sin, n->a), diff(n->a, v)));
      case Op::exp: return bin(Op::mul, n, diff(n->a, v));
      case Op::log: return bin(Op::div, diff(n->a, v), n->a);
      case Op::sqrt: return bin(Op::div, diff(n->a, v), bin(Op::mul, make_num(2.0), n));
    }
    return make_num(0.0);
  }

  // "2π" -> "2*pi", "π" -> "pi".
  static std::string normalize(const std::string& s) {
    static const std::string pi_utf8 = "\xCF\x80";
    std::string out;
    for (std::size_t i = 0; i < s.size();) {
      if (s.compare(i, pi_utf8.size(), pi_utf8) == 0) {
        if (!out.empty() && (std::isdigit(static_cast<unsigned char>(out.back())) || out.back() == '.'))
          out += '*';
        out += "pi";
        i += pi_utf8.size();
      } else {
        out += s[i++];
      }
    }
    return out;
  }

  struct Parser {
    std::string src;
    std::size_t pos;

    void skip_ws() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    bool eat(char c) {
      skip_ws();
      if (pos < src.size() && src[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    P parse_sum() {
      P lhs = parse_product();
      for (;;) {
        if (eat('+')) lhs = bin(Op::add, lhs, parse_product());
        else if (eat('-')) lhs = bin(Op::sub, lhs, parse_product());
        else return lhs;
      }
    }
    P parse_product() {
      P lhs = parse_unary();
      for (;;) {
        if (eat('*')) lhs = bin(Op::mul, lhs, parse_unary());
        else if (eat('/')) lhs = bin(Op::div, lhs, parse_unary());
        else return lhs;
      }
    }
    P parse_unary() {
      if (eat('-')) return un(Op::neg, parse_unary());
      if (eat('+')) return parse_unary();
      return parse_power();
    }
    P parse_power() {
      P base = parse_atom();
      if (eat('^')) return bin(Op::pow, base, parse_unary());
      return base;
    }
    P parse_atom() {
      skip_ws();
      require(pos < src.size(), "unexpected end of expression");
      char c = src[pos];
      if (c == '(') {
        ++pos;
        P inner = parse_sum();
        require(eat(')'), "missing ')' in expression");
        return inner;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v = std::stod(src.substr(pos), &used);
        pos += used;
        return make_num(v);
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        std::size_t start = pos;
        while (pos < src.size() && (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
          ++pos;
        std::string id = src.substr(start, pos - start);
        if (id == "pi") return make_num(kPi);
        if ((id[0] == 'x' || id[0] == 'u') && id.size() > 1 &&
            std::all_of(id.begin() + 1, id.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); }))
          return make_var(std::stoi(id.substr(1)));
        Op op;
        if (id == "sin") op = Op::sin;
        else if (id == "cos") op = Op::cos;
        else if (id == "exp") op = Op::exp;
        else if (id == "log") op = Op::log;
        else if (id == "sqrt") op = Op::sqrt;
        else throw Error(ErrorKind::validation, "unknown identifier '" + id + "' in expression");
        require(eat('('), "expected '(' after " + id);
        P arg = parse_sum();
        require(eat(')'), "missing ')' after argument of " + id);
        return un(op, arg);
      }
      throw Error(ErrorKind::validation, std::string("unexpected character '") + c + "' in expression");
    }
  };
};

/// Several expressions flattened into one instruction tape; structurally equal
/// subexpressions are evaluated once.
class ExprProgram {
 public:
  ExprProgram() = default;
  explicit ExprProgram(const std::vector<Expr>& exprs) {
    for (const auto& e : exprs) outputs_.push_back(emit(*e.node_));
    max_var_ = -1;
    for (const auto& in : tape_)
      if (in.op == Expr::Op::var) max_var_ = std::max(max_var_, in.var);
    seen_.clear();
    cse_.clear();
  }

  int outputs() const { return static_cast<int>(outputs_.size()); }
  int instructions() const { return static_cast<int>(tape_.size()); }

  /// Evaluates every expression at x into out (size outputs()).
  void eval(const Vec& x, double* out) const {
    require(max_var_ < x.size(), "expression variable out of range");
    thread_local std::vector<double> r;
    r.resize(tape_.size());
    for (std::size_t i = 0; i < tape_.size(); ++i) {
      const Instr& in = tape_[i];
      switch (in.op) {
        case Expr::Op::num: r[i] = in.value; break;
        case Expr::Op::var: r[i] = x[in.var]; break;
        case Expr::Op::add: r[i] = r[in.a] + r[in.b]; break;
        case Expr::Op::sub: r[i] = r[in.a] - r[in.b]; break;
        case Expr::Op::mul: r[i] = r[in.a] * r[in.b]; break;
        case Expr::Op::div: r[i] = r[in.a] / r[in.b]; break;
        case Expr::Op::pow: r[i] = power(r[in.a], r[in.b], in.var); break;
        case Expr::Op::neg: r[i] = -r[in.a]; break;
        case Expr::Op::sin: r[i] = std::sin(r[in.a]); break;
        case Expr::Op::cos: r[i] = std::cos(r[in.a]); break;
        case Expr::Op::exp: r[i] = std::exp(r[in.a]); break;
        case Expr::Op::log: r[i] = std::log(r[in.a]); break;
        case Expr::Op::sqrt: r[i] = std::sqrt(r[in.a]); break;
      }
    }
    for (std::size_t o = 0; o < outputs_.size(); ++o) out[o] = r[outputs_[o]];
  }

 private:
  struct Instr {
    Expr::Op op;
    double value = 0.0;
    int var = -1;  // variable index, or integer exponent flag for pow (1: integer)
    int a = -1, b = -1;
  };
  std::vector<Instr> tape_;
  std::vector<int> outputs_;
  std::map<const void*, int> seen_;
  std::map<std::tuple<int, double, int, int, int>, int> cse_;
  int max_var_ = -1;

  static double power(double base, double e, int integer) {
    if (integer) {
      int k = static_cast<int>(e);
      double r = 1.0;
      for (int i = 0; i < std::abs(k); ++i) r *= base;
      return k < 0 ? 1.0 / r : r;
    }
    return std::pow(base, e);
  }

  int emit(const Expr::Node& n) {
    auto it = seen_.find(&n);
    if (it != seen_.end()) return it->second;
    Instr in{n.op, n.value, n.var, -1, -1};
    if (n.a) in.a = emit(*n.a);
    if (n.b) in.b = emit(*n.b);
    if (n.op == Expr::Op::pow) {
      const Instr& e = tape_[in.b];
      in.var = (e.op == Expr::Op::num && e.value == std::round(e.value) && std::abs(e.value) <= 16) ? 1 : 0;
    }
    auto key = std::make_tuple(static_cast<int>(in.op), in.value, in.var, in.a, in.b);
    auto c = cse_.find(key);
    int idx;
    if (c != cse_.end()) {
      idx = c->second;
    } else {
      idx = static_cast<int>(tape_.size());
      tape_.push_back(in);
      cse_[key] = idx;
    }
    seen_[&n] = idx;
    return idx;
  }
};

}  // namespace cmc

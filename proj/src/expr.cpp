#include "kansr/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include <fmt/format.h>

#include "kansr/error.hpp"

namespace kansr::expr {

namespace {

bool is_function_form(OpId op) {
  switch (op) {
    case OpId::Sqrt:
    case OpId::Log:
    case OpId::Exp:
    case OpId::Sin:
    case OpId::Cos:
    case OpId::Tan:
    case OpId::Tanh:
    case OpId::Abs:
    case OpId::Sgn:
    case OpId::Atan:
    case OpId::Asin:
    case OpId::Acos:
    case OpId::Atanh:
    case OpId::Gauss: return true;
    default: return false;
  }
}

Tree make(Node n) { return std::make_shared<const Node>(std::move(n)); }

class Parser {
 public:
  Parser(std::string_view text, const ParseOptions& opt) : s_(text), opt_(opt) {}

  Tree run() {
    Tree t = parse_expr();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected character '" + std::string(1, s_[pos_]) + "'");
    return t;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError("expression: " + msg, pos_); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Tree parse_expr() {
    std::vector<Tree> terms{parse_term()};
    while (true) {
      if (accept('+')) {
        terms.push_back(parse_term());
      } else if (peek_binary_minus()) {
        ++pos_;
        terms.push_back(negate(parse_term(false)));
      } else {
        break;
      }
    }
    return terms.size() == 1 ? terms.front() : add(std::move(terms));
  }

  bool peek_binary_minus() {
    skip_ws();
    return pos_ < s_.size() && s_[pos_] == '-';
  }

  Tree parse_term(bool allow_sign = true) {
    bool negative = false;
    if (allow_sign && accept('-')) negative = true;
    std::vector<Tree> factors{parse_power()};
    while (true) {
      if (accept('*')) {
        factors.push_back(parse_power());
      } else if (accept('/')) {
        factors.push_back(pow(parse_power(), -1));
      } else {
        break;
      }
    }
    Tree t = factors.size() == 1 ? factors.front() : mul(std::move(factors));
    return negative ? negate(t) : t;
  }

  static Tree negate(const Tree& t) {
    if (t->kind == Kind::Constant) return constant(-t->value);
    if (t->kind == Kind::Mul && !t->children.empty() && t->children.front()->kind == Kind::Constant) {
      std::vector<Tree> f = t->children;
      f.front() = constant(-f.front()->value);
      return mul(std::move(f));
    }
    if (t->kind == Kind::Mul) {
      std::vector<Tree> f{constant(-1.0)};
      f.insert(f.end(), t->children.begin(), t->children.end());
      return mul(std::move(f));
    }
    return mul({constant(-1.0), t});
  }

  Tree parse_power() {
    Tree base = parse_primary();
    if (accept('^')) {
      skip_ws();
      bool neg = false;
      if (pos_ < s_.size() && s_[pos_] == '-') {
        neg = true;
        ++pos_;
      }
      skip_ws();
      const std::size_t start = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (start == pos_) fail("expected integer exponent");
      if (pos_ < s_.size() && (s_[pos_] == '.' || s_[pos_] == 'e')) fail("only integer exponents are supported");
      const int k = std::stoi(std::string(s_.substr(start, pos_ - start)));
      return pow(base, neg ? -k : k);
    }
    return base;
  }

  Tree parse_primary() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of input");
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      Tree t = parse_expr();
      if (!accept(')')) fail("expected ')'");
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
      const std::string ident(s_.substr(start, pos_ - start));
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == '(') {
        const auto op = op_from_name(ident);
        if (!op || !is_function_form(*op)) {
          pos_ = start;
          fail("unknown function '" + ident + "'");
        }
        ++pos_;
        Tree arg = parse_expr();
        if (!accept(')')) fail("expected ')'");
        return unary(*op, arg);
      }
      if (ident == "pi") return constant(std::numbers::pi);
      if (!opt_.variables.empty()) {
        for (std::size_t i = 0; i < opt_.variables.size(); ++i)
          if (opt_.variables[i] == ident) return variable(i);
      } else if (ident.size() > 1 && ident[0] == 'x' &&
                 std::all_of(ident.begin() + 1, ident.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
        const std::size_t idx = std::stoul(ident.substr(1));
        if (idx >= 1) return variable(idx - 1);
      }
      pos_ = start;
      fail("unknown variable '" + ident + "'");
    }
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  Tree parse_number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < s_.size() && (s_[p] == '+' || s_[p] == '-')) ++p;
      if (p < s_.size() && std::isdigit(static_cast<unsigned char>(s_[p]))) {
        pos_ = p;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      }
    }
    const std::string text(s_.substr(start, pos_ - start));
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return constant(v);
    } catch (const std::exception&) {
      pos_ = start;
      fail("malformed number '" + text + "'");
    }
  }

  std::string_view s_;
  const ParseOptions& opt_;
  std::size_t pos_ = 0;
};

std::string format_constant(double v, int digits) {
  if (v == 0.0) return "0";
  return fmt::format("{:.{}g}", v, digits);
}

int kind_rank(Kind k) {
  switch (k) {
    case Kind::Constant: return 0;
    case Kind::Variable: return 1;
    case Kind::Pow: return 2;
    case Kind::Unary: return 3;
    case Kind::Mul: return 4;
    case Kind::Add: return 5;
  }
  return 6;
}

std::size_t min_var(const Tree& t) {
  if (t->kind == Kind::Variable) return t->var;
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (const auto& c : t->children) m = std::min(m, min_var(c));
  return m;
}

std::size_t first_form(const Tree& t) {
  if (t->kind == Kind::Unary) return form_id(t->op);
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (const auto& c : t->children) m = std::min(m, first_form(c));
  return m;
}

// Canonical order: constants first (Mul) or last (Add), then by lowest
// variable index, node kind, form id, constant value, text.
struct CanonicalLess {
  bool constants_first;

  bool operator()(const Tree& a, const Tree& b) const {
    const bool ca = a->kind == Kind::Constant;
    const bool cb = b->kind == Kind::Constant;
    if (ca != cb) return constants_first ? ca : cb;
    if (ca) return a->value < b->value;
    const std::size_t va = min_var(a);
    const std::size_t vb = min_var(b);
    if (va != vb) return va < vb;
    if (kind_rank(a->kind) != kind_rank(b->kind)) return kind_rank(a->kind) < kind_rank(b->kind);
    const std::size_t fa = first_form(a);
    const std::size_t fb = first_form(b);
    if (fa != fb) return fa < fb;
    return serialize(a, {17, {}}) < serialize(b, {17, {}});
  }
};

std::string key_of(const Tree& t) { return serialize(t, {17, {}}); }

Tree simplify_once(const Tree& t);

Tree simplify_unary(const Tree& t) {
  Tree c = simplify_once(t->children[0]);
  if (t->op == OpId::Identity) return c;
  if (c->kind == Kind::Constant) {
    const OpValue v = apply(t->op, c->value);
    if (std::isfinite(v.value) && !v.saturated) return constant(v.value);
  }
  return unary(t->op, c);
}

Tree simplify_pow(const Tree& t) {
  Tree b = simplify_once(t->children[0]);
  const int k = t->exponent;
  if (k == 0) return constant(1.0);
  if (k == 1) return b;
  if (b->kind == Kind::Constant) {
    const double v = std::pow(b->value, k);
    if (std::isfinite(v)) return constant(v);
  }
  if (b->kind == Kind::Pow) return pow(b->children[0], b->exponent * k);
  return pow(b, k);
}

Tree simplify_mul(const Tree& t) {
  double coef = 1.0;
  std::vector<Tree> flat;
  std::vector<Tree> work;
  for (const auto& c : t->children) work.push_back(simplify_once(c));
  while (!work.empty()) {
    Tree c = work.back();
    work.pop_back();
    if (c->kind == Kind::Mul) {
      work.insert(work.end(), c->children.begin(), c->children.end());
    } else if (c->kind == Kind::Constant) {
      coef *= c->value;
    } else {
      flat.push_back(c);
    }
  }
  if (coef == 0.0) return constant(0.0);

  // Merge repeated bases into integer powers.
  std::map<std::string, std::pair<Tree, int>> powers;
  std::vector<std::string> order;
  for (const auto& f : flat) {
    Tree base = f;
    int k = 1;
    if (f->kind == Kind::Pow) {
      base = f->children[0];
      k = f->exponent;
    }
    const std::string key = key_of(base);
    auto it = powers.find(key);
    if (it == powers.end()) {
      powers.emplace(key, std::pair{base, k});
      order.push_back(key);
    } else {
      it->second.second += k;
    }
  }
  std::vector<Tree> factors;
  for (const auto& key : order) {
    const auto& [base, k] = powers.at(key);
    if (k == 0) continue;
    factors.push_back(k == 1 ? base : pow(base, k));
  }

  if (factors.empty()) return constant(coef);
  if (factors.size() == 1 && factors.front()->kind == Kind::Add && coef != 1.0) {
    std::vector<Tree> terms;
    for (const auto& term : factors.front()->children) terms.push_back(mul({constant(coef), term}));
    return add(std::move(terms));
  }
  std::sort(factors.begin(), factors.end(), CanonicalLess{true});
  if (coef != 1.0) factors.insert(factors.begin(), constant(coef));
  return factors.size() == 1 ? factors.front() : mul(std::move(factors));
}

Tree simplify_add(const Tree& t) {
  double constant_sum = 0.0;
  std::vector<Tree> work;
  for (const auto& c : t->children) work.push_back(simplify_once(c));
  std::vector<Tree> flat;
  while (!work.empty()) {
    Tree c = work.back();
    work.pop_back();
    if (c->kind == Kind::Add) {
      work.insert(work.end(), c->children.begin(), c->children.end());
    } else if (c->kind == Kind::Constant) {
      constant_sum += c->value;
    } else {
      flat.push_back(c);
    }
  }
  // Like terms: split each into coefficient and remainder.
  std::map<std::string, std::pair<Tree, double>> like;
  std::vector<std::string> order;
  for (const auto& term : flat) {
    double c = 1.0;
    Tree rest = term;
    if (term->kind == Kind::Mul && term->children.front()->kind == Kind::Constant) {
      c = term->children.front()->value;
      std::vector<Tree> f(term->children.begin() + 1, term->children.end());
      rest = f.size() == 1 ? f.front() : mul(std::move(f));
    }
    const std::string key = key_of(rest);
    auto it = like.find(key);
    if (it == like.end()) {
      like.emplace(key, std::pair{rest, c});
      order.push_back(key);
    } else {
      it->second.second += c;
    }
  }
  std::vector<Tree> terms;
  for (const auto& key : order) {
    const auto& [rest, c] = like.at(key);
    if (c == 0.0) continue;
    if (c == 1.0) {
      terms.push_back(rest);
    } else if (rest->kind == Kind::Mul) {
      std::vector<Tree> f{constant(c)};
      f.insert(f.end(), rest->children.begin(), rest->children.end());
      terms.push_back(mul(std::move(f)));
    } else {
      terms.push_back(mul({constant(c), rest}));
    }
  }
  std::sort(terms.begin(), terms.end(), CanonicalLess{false});
  if (constant_sum != 0.0 || terms.empty()) terms.push_back(constant(constant_sum));
  return terms.size() == 1 ? terms.front() : add(std::move(terms));
}

Tree simplify_once(const Tree& t) {
  switch (t->kind) {
    case Kind::Constant:
    case Kind::Variable: return t;
    case Kind::Unary: return simplify_unary(t);
    case Kind::Pow: return simplify_pow(t);
    case Kind::Mul: return simplify_mul(t);
    case Kind::Add: return simplify_add(t);
  }
  return t;
}

void serialize_into(const Tree& t, const SerializeOptions& opt, std::string& out);

std::string ser(const Tree& t, const SerializeOptions& opt) {
  std::string s;
  serialize_into(t, opt, s);
  return s;
}

void serialize_into(const Tree& t, const SerializeOptions& opt, std::string& out) {
  switch (t->kind) {
    case Kind::Constant: out += format_constant(t->value, opt.significant_digits); return;
    case Kind::Variable:
      if (t->var < opt.variables.size()) {
        out += opt.variables[t->var];
      } else {
        out += "x" + std::to_string(t->var + 1);
      }
      return;
    case Kind::Unary:
      out += std::string(name(t->op)) + "(" + ser(t->children[0], opt) + ")";
      return;
    case Kind::Pow: {
      const Tree& b = t->children[0];
      const std::string bs = ser(b, opt);
      const bool bare = b->kind == Kind::Variable || b->kind == Kind::Unary ||
                        (b->kind == Kind::Constant && b->value > 0.0 && bs.find('e') == std::string::npos);
      out += bare ? bs : "(" + bs + ")";
      out += "^" + std::to_string(t->exponent);
      return;
    }
    case Kind::Mul: {
      const auto& f = t->children;
      std::size_t start = 0;
      if (f.size() > 1 && f[0]->kind == Kind::Constant && f[0]->value == -1.0) {
        out += "-";
        start = 1;
      }
      for (std::size_t i = start; i < f.size(); ++i) {
        if (i > start) out += "*";
        const std::string s = ser(f[i], opt);
        const bool wrap = f[i]->kind == Kind::Add || f[i]->kind == Kind::Mul || (i > 0 && !s.empty() && s[0] == '-');
        out += wrap ? "(" + s + ")" : s;
      }
      return;
    }
    case Kind::Add: {
      const auto& terms = t->children;
      for (std::size_t i = 0; i < terms.size(); ++i) {
        std::string s = ser(terms[i], opt);
        if (terms[i]->kind == Kind::Add) s = "(" + s + ")";
        if (i == 0) {
          out += s;
        } else if (!s.empty() && s[0] == '-') {
          out += " - " + s.substr(1);
        } else {
          out += " + " + s;
        }
      }
      return;
    }
  }
}

}  // namespace

Tree constant(double v) {
  Node n;
  n.kind = Kind::Constant;
  n.value = v;
  return make(std::move(n));
}

Tree variable(std::size_t index) {
  Node n;
  n.kind = Kind::Variable;
  n.var = index;
  return make(std::move(n));
}

Tree unary(OpId op, Tree child) {
  Node n;
  n.kind = Kind::Unary;
  n.op = op;
  n.children.push_back(std::move(child));
  return make(std::move(n));
}

Tree pow(Tree base, int exponent) {
  Node n;
  n.kind = Kind::Pow;
  n.exponent = exponent;
  n.children.push_back(std::move(base));
  return make(std::move(n));
}

Tree mul(std::vector<Tree> factors) {
  Node n;
  n.kind = Kind::Mul;
  n.children = std::move(factors);
  return make(std::move(n));
}

Tree add(std::vector<Tree> terms) {
  Node n;
  n.kind = Kind::Add;
  n.children = std::move(terms);
  return make(std::move(n));
}

Tree affine_leaf(OpId form, const AffineParams& p, Tree x) {
  if (form == OpId::Const) return constant(p.alpha + p.delta);
  if (form == OpId::Zero) return constant(p.delta);
  Tree inner = add({mul({constant(p.beta), std::move(x)}), constant(p.gamma)});
  Tree g;
  if (form == OpId::Identity) {
    g = inner;
  } else if (const int k = power_of(form); k != 0) {
    g = pow(inner, k);
  } else if (form == OpId::InvSqrt) {
    g = pow(unary(OpId::Sqrt, inner), -1);
  } else {
    g = unary(form, inner);
  }
  return add({mul({constant(p.alpha), g}), constant(p.delta)});
}

bool equal(const Tree& a, const Tree& b) {
  if (a->kind != b->kind || a->children.size() != b->children.size()) return false;
  switch (a->kind) {
    case Kind::Constant:
      if (a->value != b->value) return false;
      break;
    case Kind::Variable:
      if (a->var != b->var) return false;
      break;
    case Kind::Unary:
      if (a->op != b->op) return false;
      break;
    case Kind::Pow:
      if (a->exponent != b->exponent) return false;
      break;
    default: break;
  }
  for (std::size_t i = 0; i < a->children.size(); ++i)
    if (!equal(a->children[i], b->children[i])) return false;
  return true;
}

Tree parse(std::string_view text, const ParseOptions& opt) { return Parser(text, opt).run(); }

std::string serialize(const Tree& t, const SerializeOptions& opt) { return ser(t, opt); }

Tree simplify(const Tree& t) {
  Tree cur = t;
  std::string key = key_of(cur);
  for (int pass = 0; pass < 16; ++pass) {
    Tree next = simplify_once(cur);
    std::string next_key = key_of(next);
    cur = next;
    if (next_key == key) break;
    key = std::move(next_key);
  }
  return cur;
}

double evaluate(const Tree& t, std::span<const double> vars) {
  switch (t->kind) {
    case Kind::Constant: return t->value;
    case Kind::Variable: return vars[t->var];
    case Kind::Unary: return apply(t->op, evaluate(t->children[0], vars)).value;
    case Kind::Pow: return std::pow(evaluate(t->children[0], vars), t->exponent);
    case Kind::Mul: {
      double p = 1.0;
      for (const auto& c : t->children) p *= evaluate(c, vars);
      return p;
    }
    case Kind::Add: {
      double s = 0.0;
      for (const auto& c : t->children) s += evaluate(c, vars);
      return s;
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::size_t arity(const Tree& t) {
  if (t->kind == Kind::Variable) return t->var + 1;
  std::size_t m = 0;
  for (const auto& c : t->children) m = std::max(m, arity(c));
  return m;
}

bool contains_unary(const Tree& t, OpId op) {
  if (t->kind == Kind::Unary && t->op == op) return true;
  return std::any_of(t->children.begin(), t->children.end(), [&](const Tree& c) { return contains_unary(c, op); });
}

bool contains_power(const Tree& t, int exponent) {
  if (t->kind == Kind::Pow && t->exponent == exponent) return true;
  return std::any_of(t->children.begin(), t->children.end(), [&](const Tree& c) { return contains_power(c, exponent); });
}

std::size_t node_count(const Tree& t) {
  std::size_t n = 1;
  for (const auto& c : t->children) n += node_count(c);
  return n;
}

}  // namespace kansr::expr

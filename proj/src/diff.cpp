#include "kansr/diff.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace kansr::diff {

namespace {

double guard_positive(double x, bool& saturated) {
  if (x < kDomainMargin) {
    saturated = true;
    return kDomainMargin;
  }
  return x;
}

double guard_nonzero(double x, bool& saturated) {
  if (std::abs(x) < kDomainMargin) {
    saturated = true;
    return x < 0.0 ? -kDomainMargin : kDomainMargin;
  }
  return x;
}

double guard_unit(double x, bool& saturated) {
  constexpr double lim = 1.0 - kDomainMargin;
  if (x > lim) {
    saturated = true;
    return lim;
  }
  if (x < -lim) {
    saturated = true;
    return -lim;
  }
  return x;
}

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < std::abs(n); ++i) r *= x;
  return n < 0 ? 1.0 / r : r;
}

// Forward value of a primitive; shared by recording and replay so that replay
// is exact.
double primitive_value(Op op, const double* a, std::size_t n, double aux) {
  bool sat = false;
  switch (op) {
    case Op::Add: return a[0] + a[1];
    case Op::Sub: return a[0] - a[1];
    case Op::Mul: return a[0] * a[1];
    case Op::Div: return a[0] / guard_nonzero(a[1], sat);
    case Op::AddConst: return a[0] + aux;
    case Op::MulConst: return a[0] * aux;
    case Op::PowInt: {
      const int k = static_cast<int>(aux);
      return ipow(k < 0 ? guard_nonzero(a[0], sat) : a[0], k);
    }
    case Op::Exp: return std::exp(a[0]);
    case Op::Log: return std::log(guard_positive(a[0], sat));
    case Op::Sin: return std::sin(a[0]);
    case Op::Cos: return std::cos(a[0]);
    case Op::Tan: return std::tan(a[0]);
    case Op::Tanh: return std::tanh(a[0]);
    case Op::Asinh: return std::asinh(a[0]);
    case Op::Sqrt: return std::sqrt(guard_positive(a[0], sat));
    case Op::Abs: return std::abs(a[0]);
    case Op::Atan: return std::atan(a[0]);
    case Op::Asin: return std::asin(guard_unit(a[0], sat));
    case Op::Acos: return std::acos(guard_unit(a[0], sat));
    case Op::Atanh: return std::atanh(guard_unit(a[0], sat));
    case Op::Gaussian: return std::exp(-a[0] * a[0]);
    case Op::Sign: return a[0] > 0.0 ? 1.0 : (a[0] < 0.0 ? -1.0 : 0.0);
    case Op::ClampMin: return a[0] < aux ? aux : a[0];
    case Op::ClampMax: return a[0] > aux ? aux : a[0];
    case Op::Sum: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a[i];
      return s;
    }
    case Op::Leaf:
    case Op::Custom: break;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

Var unary(Op op, Var a, double aux = 0.0) {
  const double x = a.value();
  const double val = primitive_value(op, &x, 1, aux);
  bool sat = false;
  double d = 0.0;
  switch (op) {
    case Op::AddConst: d = 1.0; break;
    case Op::MulConst: d = aux; break;
    case Op::PowInt: {
      const int k = static_cast<int>(aux);
      const double base = k < 0 ? guard_nonzero(x, sat) : x;
      d = sat ? 0.0 : k * ipow(base, k - 1);
      break;
    }
    case Op::Exp: d = val; break;
    case Op::Log: guard_positive(x, sat); d = sat ? 0.0 : 1.0 / x; break;
    case Op::Sin: d = std::cos(x); break;
    case Op::Cos: d = -std::sin(x); break;
    case Op::Tan: d = 1.0 + val * val; break;
    case Op::Tanh: d = 1.0 - val * val; break;
    case Op::Asinh: d = 1.0 / std::sqrt(1.0 + x * x); break;
    case Op::Sqrt: guard_positive(x, sat); d = sat ? 0.0 : 0.5 / val; break;
    case Op::Abs: d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
    case Op::Atan: d = 1.0 / (1.0 + x * x); break;
    case Op::Asin: guard_unit(x, sat); d = sat ? 0.0 : 1.0 / std::sqrt(1.0 - x * x); break;
    case Op::Acos: guard_unit(x, sat); d = sat ? 0.0 : -1.0 / std::sqrt(1.0 - x * x); break;
    case Op::Atanh: guard_unit(x, sat); d = sat ? 0.0 : 1.0 / (1.0 - x * x); break;
    case Op::Gaussian: d = -2.0 * x * val; break;
    case Op::Sign: d = 0.0; break;
    case Op::ClampMin: d = x < aux ? 0.0 : 1.0; break;
    case Op::ClampMax: d = x > aux ? 0.0 : 1.0; break;
    default: throw std::logic_error("unary: not a unary primitive");
  }
  if (sat) a.tape->note_saturation();
  return a.tape->record1(op, val, a, d, aux);
}

Tape* same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::logic_error("operands on different tapes");
  return a.tape;
}

}  // namespace

double Var::value() const { return tape->value(index); }

Var Tape::parameter(double value) {
  Var v = constant(value);
  params_.push_back(v.index);
  return v;
}

Var Tape::constant(double value) {
  nodes_.push_back(Node{value, 0.0, static_cast<std::uint32_t>(args_.size()), 0, Op::Leaf});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(double value, std::span<const std::uint32_t> args,
                 std::span<const double> partials, Op op, double aux) {
  if (args.size() != partials.size()) throw std::invalid_argument("record: args/partials length mismatch");
  const auto begin = static_cast<std::uint32_t>(args_.size());
  args_.insert(args_.end(), args.begin(), args.end());
  partials_.insert(partials_.end(), partials.begin(), partials.end());
  nodes_.push_back(Node{value, aux, begin, static_cast<std::uint32_t>(args.size()), op});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record1(Op op, double value, Var a, double da, double aux) {
  const auto begin = static_cast<std::uint32_t>(args_.size());
  args_.push_back(a.index);
  partials_.push_back(da);
  nodes_.push_back(Node{value, aux, begin, 1, op});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record2(Op op, double value, Var a, double da, Var b, double db) {
  const auto begin = static_cast<std::uint32_t>(args_.size());
  args_.push_back(a.index);
  args_.push_back(b.index);
  partials_.push_back(da);
  partials_.push_back(db);
  nodes_.push_back(Node{value, 0.0, begin, 2, op});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::vector<double> Tape::adjoints(Var output) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[output.index] = 1.0;
  for (std::size_t k = output.index + 1; k-- > 0;) {
    const double a = adj[k];
    if (a == 0.0) continue;
    const Node& n = nodes_[k];
    const std::uint32_t* arg = args_.data() + n.arg_begin;
    const double* p = partials_.data() + n.arg_begin;
    for (std::uint32_t j = 0; j < n.arg_count; ++j) adj[arg[j]] += a * p[j];
  }
  return adj;
}

std::vector<double> Tape::backward(Var output) const {
  const std::vector<double> adj = adjoints(output);
  std::vector<double> grad(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) grad[i] = adj[params_[i]];
  return grad;
}

std::vector<double> Tape::replay() const {
  std::vector<double> out(nodes_.size());
  std::vector<double> argv;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& n = nodes_[k];
    if (n.op == Op::Leaf || n.op == Op::Custom) {
      out[k] = n.value;
      continue;
    }
    argv.resize(n.arg_count);
    for (std::uint32_t j = 0; j < n.arg_count; ++j) argv[j] = out[args_[n.arg_begin + j]];
    out[k] = primitive_value(n.op, argv.data(), argv.size(), n.aux);
  }
  return out;
}

void Tape::clear() {
  nodes_.clear();
  args_.clear();
  partials_.clear();
  params_.clear();
  saturations_ = 0;
}

Var operator+(Var a, Var b) {
  return same_tape(a, b)->record2(Op::Add, a.value() + b.value(), a, 1.0, b, 1.0);
}

Var operator-(Var a, Var b) {
  return same_tape(a, b)->record2(Op::Sub, a.value() - b.value(), a, 1.0, b, -1.0);
}

Var operator*(Var a, Var b) {
  const double x = a.value();
  const double y = b.value();
  return same_tape(a, b)->record2(Op::Mul, x * y, a, y, b, x);
}

Var operator/(Var a, Var b) {
  Tape* t = same_tape(a, b);
  bool sat = false;
  const double y = guard_nonzero(b.value(), sat);
  if (sat) t->note_saturation();
  const double q = a.value() / y;
  return t->record2(Op::Div, q, a, 1.0 / y, b, sat ? 0.0 : -q / y);
}

Var operator+(Var a, double c) { return unary(Op::AddConst, a, c); }
Var operator+(double c, Var a) { return unary(Op::AddConst, a, c); }
Var operator-(Var a, double c) { return unary(Op::AddConst, a, -c); }
Var operator-(double c, Var a) { return unary(Op::AddConst, unary(Op::MulConst, a, -1.0), c); }
Var operator*(Var a, double c) { return unary(Op::MulConst, a, c); }
Var operator*(double c, Var a) { return unary(Op::MulConst, a, c); }
Var operator/(Var a, double c) { return unary(Op::MulConst, a, 1.0 / c); }
Var operator-(Var a) { return unary(Op::MulConst, a, -1.0); }

Var pow(Var a, int n) { return unary(Op::PowInt, a, static_cast<double>(n)); }
Var exp(Var a) { return unary(Op::Exp, a); }
Var log(Var a) { return unary(Op::Log, a); }
Var sin(Var a) { return unary(Op::Sin, a); }
Var cos(Var a) { return unary(Op::Cos, a); }
Var tan(Var a) { return unary(Op::Tan, a); }
Var tanh(Var a) { return unary(Op::Tanh, a); }
Var asinh(Var a) { return unary(Op::Asinh, a); }
Var sqrt(Var a) { return unary(Op::Sqrt, a); }
Var abs(Var a) { return unary(Op::Abs, a); }
Var atan(Var a) { return unary(Op::Atan, a); }
Var asin(Var a) { return unary(Op::Asin, a); }
Var acos(Var a) { return unary(Op::Acos, a); }
Var atanh(Var a) { return unary(Op::Atanh, a); }
Var gaussian(Var a) { return unary(Op::Gaussian, a); }
Var sign(Var a) { return unary(Op::Sign, a); }
Var clamp_min(Var a, double lo) { return unary(Op::ClampMin, a, lo); }
Var clamp_max(Var a, double hi) { return unary(Op::ClampMax, a, hi); }

Var sum(std::span<const Var> terms) {
  if (terms.empty()) throw std::invalid_argument("sum: no terms");
  Tape* t = terms.front().tape;
  std::vector<std::uint32_t> idx;
  std::vector<double> ones(terms.size(), 1.0);
  idx.reserve(terms.size());
  double s = 0.0;
  for (const Var& v : terms) {
    idx.push_back(v.index);
    s += v.value();
  }
  return t->record(s, idx, ones, Op::Sum);
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& st) {
  if (params.size() != grad.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw std::invalid_argument("adam_step: length mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

}  // namespace kansr::diff

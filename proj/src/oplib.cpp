#include "kansr/oplib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "kansr/error.hpp"

namespace kansr {

namespace {

constexpr std::array<OpInfo, kLibrarySize> kLibrary{{
    {OpId::Const, "const", Domain::All, true},
    {OpId::Identity, "x", Domain::All, true},
    {OpId::Square, "x^2", Domain::All, true},
    {OpId::Cube, "x^3", Domain::All, true},
    {OpId::Pow4, "x^4", Domain::All, true},
    {OpId::Pow5, "x^5", Domain::All, true},
    {OpId::Inv, "1/x", Domain::NonZero, true},
    {OpId::Inv2, "1/x^2", Domain::NonZero, true},
    {OpId::Inv3, "1/x^3", Domain::NonZero, true},
    {OpId::Sqrt, "sqrt", Domain::Positive, true},
    {OpId::InvSqrt, "1/sqrt", Domain::Positive, true},
    {OpId::Log, "log", Domain::Positive, true},
    {OpId::Exp, "exp", Domain::All, true},
    {OpId::Sin, "sin", Domain::All, true},
    {OpId::Cos, "cos", Domain::All, true},
    {OpId::Tan, "tan", Domain::All, true},
    {OpId::Tanh, "tanh", Domain::All, true},
    {OpId::Abs, "abs", Domain::All, true},
    {OpId::Sgn, "sgn", Domain::All, false},
    {OpId::Atan, "arctan", Domain::All, true},
    {OpId::Asin, "arcsin", Domain::OpenUnit, true},
    {OpId::Acos, "arccos", Domain::OpenUnit, true},
    {OpId::Atanh, "arctanh", Domain::OpenUnit, true},
    {OpId::Gauss, "gauss", Domain::All, true},
    {OpId::Zero, "zero", Domain::All, true},
}};

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

double guard(Domain d, double u, bool& sat) {
  constexpr double m = diff::kDomainMargin;
  switch (d) {
    case Domain::Positive:
      if (u < m) {
        sat = true;
        return m;
      }
      return u;
    case Domain::NonZero:
      if (std::abs(u) < m) {
        sat = true;
        return u < 0.0 ? -m : m;
      }
      return u;
    case Domain::OpenUnit:
      if (u > 1.0 - m) {
        sat = true;
        return 1.0 - m;
      }
      if (u < -1.0 + m) {
        sat = true;
        return -1.0 + m;
      }
      return u;
    case Domain::All: break;
  }
  return u;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

const std::array<OpInfo, kLibrarySize>& library() { return kLibrary; }

const OpInfo& info(OpId id) { return kLibrary[form_id(id)]; }

std::string_view name(OpId id) { return info(id).name; }

std::optional<OpId> op_from_name(std::string_view n) {
  for (const auto& op : kLibrary)
    if (op.name == n) return op.id;
  return std::nullopt;
}

std::vector<OpId> all_forms() {
  std::vector<OpId> v;
  for (const auto& op : kLibrary) v.push_back(op.id);
  return v;
}

int power_of(OpId id) {
  switch (id) {
    case OpId::Square: return 2;
    case OpId::Cube: return 3;
    case OpId::Pow4: return 4;
    case OpId::Pow5: return 5;
    case OpId::Inv: return -1;
    case OpId::Inv2: return -2;
    case OpId::Inv3: return -3;
    default: return 0;
  }
}

OpValue apply(OpId id, double u) {
  bool sat = false;
  const double x = guard(info(id).domain, u, sat);
  double v = 0.0;
  double d = 0.0;
  switch (id) {
    case OpId::Const: v = 1.0; break;
    case OpId::Zero: v = 0.0; break;
    case OpId::Identity: v = x; d = 1.0; break;
    case OpId::Square:
    case OpId::Cube:
    case OpId::Pow4:
    case OpId::Pow5: {
      const int k = power_of(id);
      v = ipow(x, k);
      d = k * ipow(x, k - 1);
      break;
    }
    case OpId::Inv:
    case OpId::Inv2:
    case OpId::Inv3: {
      const int k = -power_of(id);
      v = 1.0 / ipow(x, k);
      d = -k * v / x;
      break;
    }
    case OpId::Sqrt: v = std::sqrt(x); d = 0.5 / v; break;
    case OpId::InvSqrt: v = 1.0 / std::sqrt(x); d = -0.5 * v / x; break;
    case OpId::Log: v = std::log(x); d = 1.0 / x; break;
    case OpId::Exp: v = std::exp(x); d = v; break;
    case OpId::Sin: v = std::sin(x); d = std::cos(x); break;
    case OpId::Cos: v = std::cos(x); d = -std::sin(x); break;
    case OpId::Tan: v = std::tan(x); d = 1.0 + v * v; break;
    case OpId::Tanh: v = std::tanh(x); d = 1.0 - v * v; break;
    case OpId::Abs: v = std::abs(x); d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
    case OpId::Sgn: v = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
    case OpId::Atan: v = std::atan(x); d = 1.0 / (1.0 + x * x); break;
    case OpId::Asin: v = std::asin(x); d = 1.0 / std::sqrt(1.0 - x * x); break;
    case OpId::Acos: v = std::acos(x); d = -1.0 / std::sqrt(1.0 - x * x); break;
    case OpId::Atanh: v = std::atanh(x); d = 1.0 / (1.0 - x * x); break;
    case OpId::Gauss: v = std::exp(-x * x); d = -2.0 * x * v; break;
  }
  if (sat) d = 0.0;
  return {v, d, sat};
}

double SymbolicEdge::eval(double x) const {
  return affine.alpha * apply(form, affine.beta * x + affine.gamma).value + affine.delta;
}

std::pair<double, double> SymbolicEdge::eval_with_derivative(double x) const {
  const OpValue g = apply(form, affine.beta * x + affine.gamma);
  return {affine.alpha * g.value + affine.delta, affine.alpha * g.deriv * affine.beta};
}

diff::Var record_symbolic(diff::Tape& tape, OpId form, const AffineParams& p,
                          std::span<const std::uint32_t, 4> params, double x,
                          std::optional<std::uint32_t> x_index) {
  const OpValue g = apply(form, p.beta * x + p.gamma);
  if (g.saturated) tape.note_saturation();
  const double ag = p.alpha * g.deriv;
  std::array<std::uint32_t, 5> args{params[0], params[1], params[2], params[3], 0};
  std::array<double, 5> partials{g.value, ag * x, ag, 1.0, ag * p.beta};
  std::size_t n = 4;
  if (x_index) {
    args[4] = *x_index;
    n = 5;
  }
  return tape.record(p.alpha * g.value + p.delta, std::span(args.data(), n), std::span(partials.data(), n));
}

std::pair<double, double> domain_safe_start(OpId form, double xlo, double xhi, double sign, std::size_t level) {
  constexpr std::array<double, 4> kScales{0.5, 1.0, 2.0, 4.0};
  const double scale = kScales[level % kScales.size()];
  const double centre = 0.5 * (xlo + xhi);
  const double half = std::max(0.5 * (xhi - xlo), 1e-12);
  double beta = sign * scale;
  double gamma = 0.0;
  const double ulo = std::min(beta * xlo, beta * xhi);
  const double uhi = std::max(beta * xlo, beta * xhi);
  const double margin = 0.1 * (uhi - ulo) + 1e-3;
  switch (info(form).domain) {
    case Domain::Positive:
      if (ulo <= 0.0) gamma = margin - ulo;
      break;
    case Domain::NonZero:
      if (ulo <= 0.0 && uhi >= 0.0) gamma = margin - ulo;
      break;
    case Domain::OpenUnit:
      beta = sign * 0.225 * static_cast<double>(level % 4 + 1) / half;
      gamma = -beta * centre;
      break;
    case Domain::All:
      if (form == OpId::Tan && std::max(std::abs(ulo), std::abs(uhi)) > 1.4) {
        beta = sign * 1.4 * scale / 4.0 / half;
        gamma = -beta * centre;
      }
      break;
  }
  return {beta, gamma};
}

LocalFit fit_affine_local(OpId form, std::span<const Sample> samples, const LocalFitOptions& opt) {
  if (samples.size() < 8) throw ConfigError("fit_affine_local: need at least 8 samples");
  const std::size_t n = samples.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> xs(n);
  std::vector<double> ys(n);
  for (std::size_t t = 0; t < n; ++t) {
    xs[t] = samples[t].x;
    ys[t] = samples[t].y;
  }
  const double y_mean = mean_of(ys);
  const auto [xlo_it, xhi_it] = std::minmax_element(xs.begin(), xs.end());
  const double xlo = *xlo_it;
  const double xhi = *xhi_it;
  const Domain dom = info(form).domain;

  std::vector<double> g(n);
  std::vector<double> gd(n);

  // Optimal (alpha, delta) for fixed (beta, gamma); returns mse.
  auto project = [&](double beta, double gamma, double& alpha, double& delta) {
    for (std::size_t t = 0; t < n; ++t) {
      const OpValue v = apply(form, beta * xs[t] + gamma);
      g[t] = v.value;
      gd[t] = v.deriv;
    }
    const double g_mean = mean_of(g);
    double cov = 0.0;
    double var = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      cov += (g[t] - g_mean) * (ys[t] - y_mean);
      var += (g[t] - g_mean) * (g[t] - g_mean);
    }
    alpha = (var > 1e-300 && std::isfinite(var)) ? cov / var : 0.0;
    delta = y_mean - alpha * g_mean;
    double mse = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double r = ys[t] - alpha * g[t] - delta;
      mse += r * r;
    }
    return mse * inv_n;
  };

  std::mt19937_64 rng(opt.seed * 1000003ULL + form_id(form));
  std::normal_distribution<double> jitter(0.0, 0.01);

  LocalFit best{form, AffineParams{0.0, 1.0, 0.0, y_mean}, std::numeric_limits<double>::infinity()};
  for (std::size_t s = 0; s < opt.starts; ++s) {
    const double sign = (s % 2 == 0) ? 1.0 : -1.0;
    auto [beta, gamma] = domain_safe_start(form, xlo, xhi, sign, (s / 2) % 4);
    beta += jitter(rng) * std::abs(beta);
    if (dom == Domain::All) gamma += jitter(rng);

    diff::AdamState st(2, opt.lr);
    const double decay = opt.steps > 1 ? std::pow(opt.lr_final / opt.lr, 1.0 / static_cast<double>(opt.steps - 1)) : 1.0;
    double alpha = 0.0;
    double delta = 0.0;
    std::array<double, 2> theta{beta, gamma};
    for (std::size_t it = 0; it < opt.steps; ++it) {
      const double mse = project(theta[0], theta[1], alpha, delta);
      if (!std::isfinite(mse)) break;
      std::array<double, 2> grad{0.0, 0.0};
      for (std::size_t t = 0; t < n; ++t) {
        const double r = ys[t] - alpha * g[t] - delta;
        const double common = -2.0 * r * alpha * gd[t] * inv_n;
        grad[0] += common * xs[t];
        grad[1] += common;
      }
      if (!std::isfinite(grad[0]) || !std::isfinite(grad[1])) break;
      const std::array<double, 2> prev = theta;
      diff::adam_step(theta, grad, st);
      if (!std::isfinite(theta[0]) || !std::isfinite(theta[1])) {
        theta = prev;
        break;
      }
      st.lr *= decay;
    }
    const double mse = project(theta[0], theta[1], alpha, delta);
    if (std::isfinite(mse) && std::isfinite(alpha) && std::isfinite(delta) && mse < best.mse)
      best = LocalFit{form, AffineParams{alpha, theta[0], theta[1], delta}, mse};
  }
  return best;
}

std::vector<LocalFit> rank_forms_locally(std::span<const Sample> samples, std::span<const OpId> candidates,
                                         const LocalFitOptions& opt) {
  std::vector<LocalFit> out;
  out.reserve(candidates.size());
  for (OpId id : candidates) out.push_back(fit_affine_local(id, samples, opt));
  std::stable_sort(out.begin(), out.end(), [](const LocalFit& a, const LocalFit& b) {
    if (a.mse != b.mse) return a.mse < b.mse;
    return form_id(a.form) < form_id(b.form);
  });
  return out;
}

}  // namespace kansr

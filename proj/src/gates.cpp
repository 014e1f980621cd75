#include "kansr/gates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace kansr {

namespace {

constexpr std::size_t K = kLibrarySize;

}  // namespace

GatedEdge::GatedEdge(double initial_log_scale, bool scale_per_operator)
    : logits(K, 0.0),
      affine(K),
      log_scale(scale_per_operator ? K : 1, initial_log_scale),
      active(K, 1) {}

double GatedEdge::scale(std::size_t k) const {
  return std::exp(log_scale.size() == 1 ? log_scale[0] : log_scale[k]);
}

std::size_t GatedEdge::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), 1));
}

std::vector<OpId> GatedEdge::active_forms() const {
  std::vector<OpId> out;
  for (std::size_t k = 0; k < K; ++k)
    if (active[k]) out.push_back(op_at(k));
  return out;
}

std::vector<double> GatedEdge::probabilities() const {
  std::vector<double> p(K, 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k)
    if (active[k]) mx = std::max(mx, logits[k]);
  double z = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!active[k]) continue;
    p[k] = std::exp(logits[k] - mx);
    z += p[k];
  }
  for (double& v : p) v /= z;
  return p;
}

double compress(double z, double s) { return s * std::asinh(z / s); }

double GatedEdge::eval(double x) const { return eval_with_derivative(x).first; }

std::pair<double, double> GatedEdge::eval_with_derivative(double x) const {
  const std::vector<double> p = probabilities();
  double y = 0.0;
  double dy = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!active[k]) continue;
    const AffineParams& a = affine[k];
    const OpValue g = apply(op_at(k), a.beta * x + a.gamma);
    const double z = a.alpha * g.value + a.delta;
    const double s = scale(k);
    const double sigma = 1.0 / std::sqrt(1.0 + (z / s) * (z / s));
    y += p[k] * compress(z, s);
    dy += p[k] * sigma * a.alpha * g.deriv * a.beta;
  }
  return {y, dy};
}

void GatedEdge::write_parameters(std::span<double> out) const {
  if (out.size() != parameter_count()) throw std::invalid_argument("GatedEdge: parameter span size");
  std::copy(logits.begin(), logits.end(), out.begin());
  for (std::size_t k = 0; k < K; ++k) {
    out[K + 4 * k + 0] = affine[k].alpha;
    out[K + 4 * k + 1] = affine[k].beta;
    out[K + 4 * k + 2] = affine[k].gamma;
    out[K + 4 * k + 3] = affine[k].delta;
  }
  std::copy(log_scale.begin(), log_scale.end(), out.begin() + 5 * K);
}

void GatedEdge::read_parameters(std::span<const double> in) {
  if (in.size() != parameter_count()) throw std::invalid_argument("GatedEdge: parameter span size");
  std::copy(in.begin(), in.begin() + K, logits.begin());
  for (std::size_t k = 0; k < K; ++k)
    affine[k] = AffineParams{in[K + 4 * k], in[K + 4 * k + 1], in[K + 4 * k + 2], in[K + 4 * k + 3]};
  std::copy(in.begin() + 5 * K, in.end(), log_scale.begin());
}

double gate_entropy(const GatedEdge& e) {
  const std::vector<double> p = e.probabilities();
  double h = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    if (e.active[k] && p[k] > 0.0) h -= p[k] * std::log(p[k]);
  return h;
}

double gate_l1(const GatedEdge& e) {
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    if (e.active[k]) s += std::abs(e.logits[k]);
  return s;
}

GatedEdge topk_prune(const GatedEdge& e, std::size_t k) {
  if (k == 0) throw std::invalid_argument("topk_prune: k must be >= 1");
  if (k >= e.active_count()) return e;
  const std::vector<double> p = e.probabilities();
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < K; ++j)
    if (e.active[j]) idx.push_back(j);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  GatedEdge out = e;
  std::fill(out.active.begin(), out.active.end(), 0);
  for (std::size_t j = 0; j < k; ++j) out.active[idx[j]] = 1;
  return out;
}

OpId gate_argmax(const GatedEdge& e) {
  const std::vector<double> p = e.probabilities();
  std::size_t best = K;
  for (std::size_t k = 0; k < K; ++k)
    if (e.active[k] && (best == K || p[k] > p[best])) best = k;
  if (best == K) throw std::logic_error("gate_argmax: no active operator");
  return op_at(best);
}

diff::Var record_gated(diff::Tape& tape, const GatedEdge& e, std::span<const double> probs,
                       std::uint32_t param_base, double x, std::optional<std::uint32_t> x_index) {
  thread_local std::vector<std::uint32_t> args;
  thread_local std::vector<double> partials;
  thread_local std::vector<double> comp;
  args.clear();
  partials.clear();
  comp.assign(K, 0.0);

  const bool per_op = e.log_scale.size() > 1;
  double y = 0.0;
  double dx = 0.0;
  double dlog_shared = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!e.active[k]) continue;
    const AffineParams& a = e.affine[k];
    const OpValue g = apply(op_at(k), a.beta * x + a.gamma);
    if (g.saturated) tape.note_saturation();
    const double z = a.alpha * g.value + a.delta;
    const double s = e.scale(k);
    const double sigma = 1.0 / std::sqrt(1.0 + (z / s) * (z / s));
    comp[k] = compress(z, s);
    y += probs[k] * comp[k];
    const double w = probs[k] * sigma;
    const auto base = param_base + static_cast<std::uint32_t>(K + 4 * k);
    args.insert(args.end(), {base, base + 1, base + 2, base + 3});
    partials.insert(partials.end(), {w * g.value, w * a.alpha * g.deriv * x, w * a.alpha * g.deriv, w});
    dx += w * a.alpha * g.deriv * a.beta;
    const double dlog = probs[k] * (comp[k] - z * sigma);
    if (per_op) {
      args.push_back(param_base + static_cast<std::uint32_t>(5 * K + k));
      partials.push_back(dlog);
    } else {
      dlog_shared += dlog;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (!e.active[k]) continue;
    args.push_back(param_base + static_cast<std::uint32_t>(k));
    partials.push_back(probs[k] * (comp[k] - y));
  }
  if (!per_op) {
    args.push_back(param_base + static_cast<std::uint32_t>(5 * K));
    partials.push_back(dlog_shared);
  }
  if (x_index) {
    args.push_back(*x_index);
    partials.push_back(dx);
  }
  return tape.record(y, args, partials);
}

diff::Var record_gate_penalty(diff::Tape& tape, const GatedEdge& e, std::span<const double> probs,
                              std::uint32_t param_base, double w_ent, double w_l1) {
  double h = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    if (e.active[k] && probs[k] > 0.0) h -= probs[k] * std::log(probs[k]);
  std::vector<std::uint32_t> args;
  std::vector<double> partials;
  double l1 = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!e.active[k]) continue;
    const double lp = probs[k] > 0.0 ? std::log(probs[k]) : 0.0;
    const double dh = -probs[k] * (lp + h);
    const double l = e.logits[k];
    const double sgn = l > 0.0 ? 1.0 : (l < 0.0 ? -1.0 : 0.0);
    l1 += std::abs(l);
    args.push_back(param_base + static_cast<std::uint32_t>(k));
    partials.push_back(w_ent * dh + w_l1 * sgn);
  }
  return tape.record(w_ent * h + w_l1 * l1, args, partials);
}

}  // namespace kansr

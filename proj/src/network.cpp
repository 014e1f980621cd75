#include "kansr/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include "kansr/error.hpp"
#include "kansr/rng.hpp"

namespace kansr {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double silu(double x) { return x / (1.0 + std::exp(-x)); }

Range padded(Range r, double frac) {
  const double w = r.width();
  return {r.lo - frac * w, r.hi + frac * w};
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool same_bits(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

template <typename Basis>
void init_numeric(Basis& basis, Rng& rng, double noise) {
  basis.coef = least_squares_coefficients(basis, silu);
  std::normal_distribution<double> n(0.0, noise);
  if (noise > 0.0)
    for (double& c : basis.coef) c += n(rng);
}

EdgeFunction make_numeric(const NumericInit& init, Range r, Rng& rng) {
  if (init.basis == NumericBasis::Spline) {
    SplineEdge e{SplineBasis(r, init.grid, init.degree)};
    init_numeric(e.basis, rng, init.noise);
    return e;
  }
  RbfEdge e{RbfBasis(r, init.grid)};
  init_numeric(e.basis, rng, init.noise);
  return e;
}

GatedEdge make_gated(const GatedInit& init, Range r, Rng& rng) {
  GatedEdge e(init.log_scale, init.scale_per_operator);
  std::normal_distribution<double> jitter(0.0, 0.01);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t k = 0; k < kLibrarySize; ++k) {
    const OpId op = op_at(k);
    const double sign = coin(rng) ? 1.0 : -1.0;
    auto [beta, gamma] = domain_safe_start(op, r.lo, r.hi, sign, 1);
    beta += jitter(rng) * std::abs(beta);
    // alpha brings the operator output on the range to unit magnitude
    double peak = 0.0;
    for (int t = 0; t < 16; ++t) {
      const double x = r.lo + r.width() * t / 15.0;
      const double v = apply(op, beta * x + gamma).value;
      if (std::isfinite(v)) peak = std::max(peak, std::abs(v));
    }
    e.affine[k] = AffineParams{1.0 / std::max(1.0, peak), beta, gamma, 0.0};
  }
  return e;
}

std::vector<Range> column_ranges(const Batch& b, std::size_t dim) {
  if (b.dim != dim) throw std::invalid_argument("KanModel: sample dimension does not match the shape");
  std::vector<Range> out;
  std::vector<double> col(b.size());
  for (std::size_t k = 0; k < dim; ++k) {
    for (std::size_t i = 0; i < b.size(); ++i) col[i] = b.x[i * dim + k];
    out.push_back(fit_grid_range(col));
  }
  return out;
}

}  // namespace

EdgeKind kind_of(const EdgeFunction& e) { return static_cast<EdgeKind>(e.index()); }

bool is_numeric(const EdgeFunction& e) {
  return std::holds_alternative<SplineEdge>(e) || std::holds_alternative<RbfEdge>(e);
}

std::size_t parameter_count(const EdgeFunction& e) {
  return std::visit(overloaded{
                        [](const PrunedEdge&) -> std::size_t { return 0; },
                        [](const SplineEdge& s) -> std::size_t { return s.basis.size(); },
                        [](const RbfEdge& s) -> std::size_t { return s.basis.size(); },
                        [](const GatedEdge& g) -> std::size_t { return g.parameter_count(); },
                        [](const SymbolicEdge&) -> std::size_t { return 4; },
                    },
                    e);
}

double eval_edge(const EdgeFunction& e, double x) {
  return std::visit(overloaded{
                        [](const PrunedEdge&) { return 0.0; },
                        [x](const SplineEdge& s) { return s.basis.eval(x); },
                        [x](const RbfEdge& s) { return s.basis.eval(x); },
                        [x](const GatedEdge& g) { return g.eval(x); },
                        [x](const SymbolicEdge& s) { return s.eval(x); },
                    },
                    e);
}

std::pair<double, double> eval_edge_with_derivative(const EdgeFunction& e, double x) {
  return std::visit(overloaded{
                        [](const PrunedEdge&) { return std::pair{0.0, 0.0}; },
                        [x](const SplineEdge& s) { return s.basis.eval_with_derivative(x); },
                        [x](const RbfEdge& s) { return s.basis.eval_with_derivative(x); },
                        [x](const GatedEdge& g) { return g.eval_with_derivative(x); },
                        [x](const SymbolicEdge& s) { return s.eval_with_derivative(x); },
                    },
                    e);
}

KanModel::KanModel(ModelShape shape, EdgeFunction prototype) : shape_(shape) {
  if (shape.inputs == 0 || shape.units() == 0) throw ConfigError("KanModel: empty shape");
  edges_.assign(hidden_edge_count() + shape.units(), prototype);
  alive_.assign(shape.units(), 1);
}

KanModel KanModel::numeric(ModelShape shape, const NumericInit& init, const Batch& sample) {
  KanModel m(shape, PrunedEdge{});
  Rng rng(derive_seed(init.seed, {0x6e756dULL}));
  const std::vector<Range> cols = column_ranges(sample, shape.inputs);
  for (std::size_t e = 0; e < m.hidden_edge_count(); ++e)
    m.edges_[e] = make_numeric(init, cols[e % shape.inputs], rng);
  // output grids cover the padded hidden activation range at init
  std::vector<double> hv;
  std::vector<double> units(shape.units());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    m.hidden_values(sample.row(i), units);
    hv.insert(hv.end(), units.begin(), units.end());
  }
  const Range hr = padded(fit_grid_range(hv), 0.25);
  for (std::size_t u = 0; u < shape.units(); ++u) m.edges_[m.output_edge_id(u)] = make_numeric(init, hr, rng);
  return m;
}

KanModel KanModel::gated(ModelShape shape, const GatedInit& init, const Batch& sample) {
  KanModel m(shape, PrunedEdge{});
  Rng rng(derive_seed(init.seed, {0x676174ULL}));
  const std::vector<Range> cols = column_ranges(sample, shape.inputs);
  for (std::size_t e = 0; e < m.hidden_edge_count(); ++e)
    m.edges_[e] = make_gated(init, cols[e % shape.inputs], rng);
  std::vector<double> hv;
  std::vector<double> units(shape.units());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    m.hidden_values(sample.row(i), units);
    hv.insert(hv.end(), units.begin(), units.end());
  }
  const Range hr = padded(fit_grid_range(hv), 0.25);
  for (std::size_t u = 0; u < shape.units(); ++u) m.edges_[m.output_edge_id(u)] = make_gated(init, hr, rng);
  return m;
}

EdgeLocation KanModel::locate(std::size_t id) const {
  if (id >= edges_.size()) throw std::out_of_range("KanModel::locate: bad edge id");
  if (id < hidden_edge_count()) return {0, id / shape_.inputs, id % shape_.inputs};
  return {1, 0, id - hidden_edge_count()};
}

std::size_t KanModel::unit_of_subnode(std::size_t subnode) const {
  if (subnode < shape_.additive) return subnode;
  return shape_.additive + (subnode - shape_.additive) / 2;
}

void KanModel::prune_unit(std::size_t unit) {
  alive_.at(unit) = 0;
  for (std::size_t j = 0; j < shape_.subnodes(); ++j) {
    if (unit_of_subnode(j) != unit) continue;
    for (std::size_t i = 0; i < shape_.inputs; ++i) edges_[hidden_edge_id(j, i)] = PrunedEdge{};
  }
  edges_[output_edge_id(unit)] = PrunedEdge{};
}

std::size_t KanModel::active_edge_count() const {
  return static_cast<std::size_t>(
      std::count_if(edges_.begin(), edges_.end(), [](const EdgeFunction& e) { return kind_of(e) != EdgeKind::Pruned; }));
}

void KanModel::hidden_values(std::span<const double> x, std::span<double> units) const {
  const std::size_t a = shape_.additive;
  thread_local std::vector<double> sub;
  sub.assign(shape_.subnodes(), 0.0);
  for (std::size_t j = 0; j < shape_.subnodes(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < shape_.inputs; ++i) s += eval_edge(edges_[hidden_edge_id(j, i)], x[i]);
    sub[j] = s;
  }
  for (std::size_t u = 0; u < a; ++u) units[u] = alive_[u] ? sub[u] : 0.0;
  for (std::size_t u = 0; u < shape_.multiplicative; ++u)
    units[a + u] = alive_[a + u] ? sub[a + 2 * u] * sub[a + 2 * u + 1] : 0.0;
}

double KanModel::predict(std::span<const double> x) const {
  if (x.size() != shape_.inputs) throw std::invalid_argument("KanModel::predict: input dimension mismatch");
  thread_local std::vector<double> units;
  units.resize(shape_.units());
  hidden_values(x, units);
  double y = 0.0;
  for (std::size_t u = 0; u < shape_.units(); ++u) y += eval_edge(edges_[output_edge_id(u)], units[u]);
  return y;
}

std::size_t KanModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : edges_) n += kansr::parameter_count(e);
  return n;
}

std::vector<std::size_t> KanModel::parameter_offsets() const {
  std::vector<std::size_t> off(edges_.size());
  std::size_t n = 0;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    off[e] = n;
    n += kansr::parameter_count(edges_[e]);
  }
  return off;
}

std::vector<double> KanModel::parameters() const {
  std::vector<double> p(parameter_count());
  std::size_t o = 0;
  for (const auto& e : edges_) {
    std::visit(overloaded{
                   [](const PrunedEdge&) {},
                   [&](const SplineEdge& s) { std::copy(s.basis.coef.begin(), s.basis.coef.end(), p.begin() + o); },
                   [&](const RbfEdge& s) { std::copy(s.basis.coef.begin(), s.basis.coef.end(), p.begin() + o); },
                   [&](const GatedEdge& g) { g.write_parameters(std::span(p).subspan(o, g.parameter_count())); },
                   [&](const SymbolicEdge& s) {
                     p[o] = s.affine.alpha;
                     p[o + 1] = s.affine.beta;
                     p[o + 2] = s.affine.gamma;
                     p[o + 3] = s.affine.delta;
                   },
               },
               e);
    o += kansr::parameter_count(e);
  }
  return p;
}

void KanModel::set_parameters(std::span<const double> p) {
  if (p.size() != parameter_count()) throw std::invalid_argument("KanModel::set_parameters: length mismatch");
  std::size_t o = 0;
  for (auto& e : edges_) {
    const std::size_t n = kansr::parameter_count(e);
    const auto src = p.subspan(o, n);
    std::visit(overloaded{
                   [](PrunedEdge&) {},
                   [&](SplineEdge& s) { std::copy(src.begin(), src.end(), s.basis.coef.begin()); },
                   [&](RbfEdge& s) { std::copy(src.begin(), src.end(), s.basis.coef.begin()); },
                   [&](GatedEdge& g) { g.read_parameters(src); },
                   [&](SymbolicEdge& s) { s.affine = AffineParams{src[0], src[1], src[2], src[3]}; },
               },
               e);
    o += n;
  }
}

bool KanModel::operator==(const KanModel& other) const {
  if (!(shape_ == other.shape_) || alive_ != other.alive_ || edges_.size() != other.edges_.size()) return false;
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& a = edges_[i];
    const auto& b = other.edges_[i];
    if (a.index() != b.index()) return false;
    const bool same = std::visit(
        overloaded{
            [](const PrunedEdge&) { return true; },
            [&](const SplineEdge& s) {
              const auto& t = std::get<SplineEdge>(b);
              return s.basis.degree == t.basis.degree && same_bits(s.basis.knots, t.basis.knots) &&
                     same_bits(s.basis.range.lo, t.basis.range.lo) && same_bits(s.basis.range.hi, t.basis.range.hi);
            },
            [&](const RbfEdge& s) {
              const auto& t = std::get<RbfEdge>(b);
              return same_bits(s.basis.centres, t.basis.centres) && same_bits(s.basis.bandwidth, t.basis.bandwidth);
            },
            [&](const GatedEdge& g) {
              const auto& t = std::get<GatedEdge>(b);
              return g.active == t.active && g.log_scale.size() == t.log_scale.size();
            },
            [&](const SymbolicEdge& s) { return s.form == std::get<SymbolicEdge>(b).form; },
        },
        a);
    if (!same) return false;
  }
  return same_bits(parameters(), other.parameters());
}

double mean_squared_error(const KanModel& m, const Batch& b) {
  if (b.size() == 0) throw std::invalid_argument("mean_squared_error: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double r = m.predict(b.row(i)) - b.y[i];
    s += r * r;
  }
  return s / static_cast<double>(b.size());
}

namespace {

// Records one edge evaluated at x; x_index is the tape node of x when x
// depends on parameters.
diff::Var record_edge(diff::Tape& tape, const EdgeFunction& e, std::uint32_t base, double x,
                      std::optional<std::uint32_t> x_index, std::span<const double> probs) {
  thread_local BasisWindow w;
  thread_local std::vector<std::uint32_t> args;
  thread_local std::vector<double> partials;
  auto numeric = [&](const auto& basis) {
    basis.window(x, w);
    args.clear();
    partials.clear();
    double v = 0.0;
    double d = 0.0;
    for (std::size_t k = 0; k < w.values.size(); ++k) {
      const double c = basis.coef[w.first + k];
      v += c * w.values[k];
      d += c * w.derivs[k];
      args.push_back(base + static_cast<std::uint32_t>(w.first + k));
      partials.push_back(w.values[k]);
    }
    if (x_index) {
      args.push_back(*x_index);
      partials.push_back(d);
    }
    return tape.record(v, args, partials);
  };
  return std::visit(overloaded{
                        [&](const PrunedEdge&) { return tape.constant(0.0); },
                        [&](const SplineEdge& s) { return numeric(s.basis); },
                        [&](const RbfEdge& s) { return numeric(s.basis); },
                        [&](const GatedEdge& g) { return record_gated(tape, g, probs, base, x, x_index); },
                        [&](const SymbolicEdge& s) {
                          const std::array<std::uint32_t, 4> idx{base, base + 1, base + 2, base + 3};
                          return record_symbolic(tape, s.form, s.affine, idx, x, x_index);
                        },
                    },
                    e);
}

}  // namespace

double loss_and_gradient(const KanModel& m, const Batch& b, const LossWeights& w, diff::Tape& tape,
                         std::vector<double>& grad) {
  const ModelShape& sh = m.shape();
  const std::size_t n = b.size();
  if (n == 0) throw std::invalid_argument("loss_and_gradient: empty batch");
  tape.clear();
  const std::vector<double> params = m.parameters();
  for (double p : params) tape.parameter(p);
  const std::vector<std::size_t> off = m.parameter_offsets();

  std::vector<std::vector<double>> probs(m.edge_count());
  for (std::size_t e = 0; e < m.edge_count(); ++e)
    if (const auto* g = std::get_if<GatedEdge>(&m.edge(e))) probs[e] = g->probabilities();

  const double inv_n = 1.0 / static_cast<double>(n);
  const double l1 = w.activation_l1 * inv_n;
  std::vector<diff::Var> sample_terms;
  sample_terms.reserve(n + m.edge_count());
  std::vector<diff::Var> edge_nodes;
  std::vector<diff::Var> sub(sh.subnodes());
  std::vector<diff::Var> units(sh.units());
  std::vector<std::uint32_t> args;
  std::vector<double> partials;
  std::vector<std::uint32_t> sum_args;
  std::vector<double> ones;

  for (std::size_t i = 0; i < n; ++i) {
    const auto x = b.row(i);
    edge_nodes.clear();
    for (std::size_t j = 0; j < sh.subnodes(); ++j) {
      sum_args.clear();
      double s = 0.0;
      for (std::size_t in = 0; in < sh.inputs; ++in) {
        const std::size_t id = m.hidden_edge_id(j, in);
        if (kind_of(m.edge(id)) == EdgeKind::Pruned) continue;
        const diff::Var v = record_edge(tape, m.edge(id), static_cast<std::uint32_t>(off[id]), x[in], std::nullopt, probs[id]);
        edge_nodes.push_back(v);
        sum_args.push_back(v.index);
        s += v.value();
      }
      ones.assign(sum_args.size(), 1.0);
      sub[j] = tape.record(s, sum_args, ones, diff::Op::Sum);
    }
    for (std::size_t u = 0; u < sh.additive; ++u) units[u] = sub[u];
    for (std::size_t u = 0; u < sh.multiplicative; ++u) {
      const diff::Var p = sub[sh.additive + 2 * u];
      const diff::Var q = sub[sh.additive + 2 * u + 1];
      units[sh.additive + u] = p * q;
    }
    sum_args.clear();
    double y = 0.0;
    for (std::size_t u = 0; u < sh.units(); ++u) {
      const std::size_t id = m.output_edge_id(u);
      if (kind_of(m.edge(id)) == EdgeKind::Pruned) continue;
      const diff::Var v =
          record_edge(tape, m.edge(id), static_cast<std::uint32_t>(off[id]), units[u].value(), units[u].index, probs[id]);
      edge_nodes.push_back(v);
      sum_args.push_back(v.index);
      y += v.value();
    }
    const double r = y - b.y[i];
    // squared residual and the activation penalty of this sample as one node
    args.assign(sum_args.begin(), sum_args.end());
    partials.assign(sum_args.size(), 2.0 * r * inv_n);
    double value = r * r * inv_n;
    if (l1 > 0.0) {
      for (const diff::Var& v : edge_nodes) {
        const double a = v.value();
        value += l1 * std::abs(a);
        args.push_back(v.index);
        partials.push_back(a > 0.0 ? l1 : (a < 0.0 ? -l1 : 0.0));
      }
    }
    sample_terms.push_back(tape.record(value, args, partials));
  }
  if (w.gate_entropy > 0.0 || w.gate_l1 > 0.0) {
    for (std::size_t e = 0; e < m.edge_count(); ++e)
      if (const auto* g = std::get_if<GatedEdge>(&m.edge(e)))
        sample_terms.push_back(
            record_gate_penalty(tape, *g, probs[e], static_cast<std::uint32_t>(off[e]), w.gate_entropy, w.gate_l1));
  }
  const diff::Var total = diff::sum(sample_terms);
  grad = tape.backward(total);
  return total.value();
}

std::vector<double> edge_importance(const KanModel& m, const Batch& b) {
  const ModelShape& sh = m.shape();
  std::vector<double> score(m.edge_count(), 0.0);
  std::vector<double> units(sh.units());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto x = b.row(i);
    for (std::size_t j = 0; j < sh.subnodes(); ++j)
      for (std::size_t in = 0; in < sh.inputs; ++in) {
        const std::size_t id = m.hidden_edge_id(j, in);
        score[id] += std::abs(eval_edge(m.edge(id), x[in]));
      }
    m.hidden_values(x, units);
    for (std::size_t u = 0; u < sh.units(); ++u) {
      const std::size_t id = m.output_edge_id(u);
      score[id] += std::abs(eval_edge(m.edge(id), units[u]));
    }
  }
  const double inv_n = b.size() > 0 ? 1.0 / static_cast<double>(b.size()) : 0.0;
  for (double& s : score) s *= inv_n;
  auto normalise = [&](std::size_t lo, std::size_t hi) {
    double mx = 0.0;
    for (std::size_t e = lo; e < hi; ++e) mx = std::max(mx, score[e]);
    for (std::size_t e = lo; e < hi; ++e) score[e] = (mx > 0.0 && std::isfinite(mx)) ? score[e] / mx : 0.0;
  };
  normalise(0, m.hidden_edge_count());
  normalise(m.hidden_edge_count(), m.edge_count());
  for (std::size_t e = 0; e < m.edge_count(); ++e)
    if (kind_of(m.edge(e)) == EdgeKind::Pruned) score[e] = 0.0;
  return score;
}

std::vector<Range> edge_input_ranges(const KanModel& m, const Batch& b) {
  const ModelShape& sh = m.shape();
  std::vector<std::vector<double>> cols(sh.inputs + sh.units());
  std::vector<double> units(sh.units());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto x = b.row(i);
    for (std::size_t in = 0; in < sh.inputs; ++in) cols[in].push_back(x[in]);
    m.hidden_values(x, units);
    for (std::size_t u = 0; u < sh.units(); ++u) cols[sh.inputs + u].push_back(units[u]);
  }
  std::vector<Range> col_range(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) col_range[c] = fit_grid_range(cols[c]);
  std::vector<Range> out(m.edge_count());
  for (std::size_t e = 0; e < m.edge_count(); ++e) {
    const EdgeLocation loc = m.locate(e);
    out[e] = loc.layer == 0 ? col_range[loc.col] : col_range[sh.inputs + loc.col];
  }
  return out;
}

void refresh_grids(KanModel& m, const Batch& b, double pad) {
  const std::vector<Range> ranges = edge_input_ranges(m, b);
  for (std::size_t e = 0; e < m.edge_count(); ++e) {
    EdgeFunction& f = m.edge(e);
    const Range r = padded(ranges[e], pad);
    if (auto* s = std::get_if<SplineEdge>(&f)) {
      if (s->basis.range == r) continue;
      const SplineBasis old = s->basis;
      SplineBasis nb(r, old.resolution(), old.degree);
      nb.coef = least_squares_coefficients(nb, [&](double x) { return old.eval(x); });
      s->basis = std::move(nb);
    } else if (auto* q = std::get_if<RbfEdge>(&f)) {
      if (q->basis.range == r) continue;
      const RbfBasis old = q->basis;
      RbfBasis nb(r, old.size());
      nb.coef = least_squares_coefficients(nb, [&](double x) { return old.eval(x); });
      q->basis = std::move(nb);
    }
  }
}

PruneReport prune(KanModel& m, std::span<const double> importance, double node_threshold, double edge_threshold) {
  if (importance.size() != m.edge_count()) throw std::invalid_argument("prune: importance length mismatch");
  const ModelShape& sh = m.shape();
  PruneReport rep;
  std::vector<double> in_max(sh.units(), 0.0);
  for (std::size_t j = 0; j < sh.subnodes(); ++j)
    for (std::size_t i = 0; i < sh.inputs; ++i) {
      const std::size_t u = m.unit_of_subnode(j);
      in_max[u] = std::max(in_max[u], importance[m.hidden_edge_id(j, i)]);
    }
  for (std::size_t u = 0; u < sh.units(); ++u) {
    if (!m.unit_alive(u)) continue;
    const double out = importance[m.output_edge_id(u)];
    if (in_max[u] < node_threshold && out < node_threshold) {
      m.prune_unit(u);
      rep.pruned_units.push_back(u);
    }
  }
  if (edge_threshold > 0.0) {
    for (std::size_t e = 0; e < m.edge_count(); ++e) {
      if (kind_of(m.edge(e)) == EdgeKind::Pruned) continue;
      if (importance[e] < edge_threshold) {
        m.edge(e) = PrunedEdge{};
        ++rep.pruned_edges;
      }
    }
  }
  bool any_alive = false;
  for (std::size_t u = 0; u < sh.units(); ++u) any_alive = any_alive || m.unit_alive(u);
  rep.everything_pruned = !any_alive || m.active_edge_count() == 0;
  return rep;
}

StageResult fit_stage(KanModel& m, const Batch& b, const StageOptions& opt) {
  StageResult res;
  std::vector<double> params = m.parameters();
  diff::AdamState st(params.size(), opt.lr);
  diff::Tape tape;
  std::vector<double> grad;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    if (opt.deadline && Clock::now() > *opt.deadline) {
      res.valid = false;
      res.reason = "timeout";
      return res;
    }
    double loss = loss_and_gradient(m, b, opt.weights, tape, grad);
    if (opt.inject_nonfinite && step == opt.steps / 2) loss = std::numeric_limits<double>::quiet_NaN();
    bool finite = std::isfinite(loss);
    for (double g : grad) finite = finite && std::isfinite(g);
    if (!finite) {
      res.valid = false;
      res.reason = "non-finite-loss";
      res.final_loss = loss;
      return res;
    }
    res.final_loss = loss;
    diff::adam_step(params, grad, st);
    m.set_parameters(params);
    ++res.steps_run;
    if (opt.on_step) opt.on_step(res.steps_run, m);
  }
  if (opt.steps > 0) {
    // loss at the final parameters
    res.final_loss = loss_and_gradient(m, b, opt.weights, tape, grad);
    if (!std::isfinite(res.final_loss)) {
      res.valid = false;
      res.reason = "non-finite-loss";
    }
  }
  return res;
}

TrainReport train_schedule(KanModel& m, const Batch& fit, const ScheduleConfig& cfg) {
  TrainReport rep;
  LossWeights base{0.0, cfg.gate_entropy, cfg.gate_l1};
  auto run = [&](const std::string& name, const LossWeights& w) {
    if (cfg.refresh_grids) refresh_grids(m, fit);
    StageOptions so{cfg.steps, cfg.lr, w, cfg.deadline, cfg.inject_nonfinite, {}};
    if (cfg.on_step) {
      const std::size_t done = rep.total_steps;
      so.on_step = [&cfg, done](std::size_t step, const KanModel& km) { cfg.on_step(done + step, km); };
    }
    const StageResult r = fit_stage(m, fit, so);
    rep.stages.push_back(name);
    rep.stage_losses.push_back(r.final_loss);
    rep.total_steps += r.steps_run;
    if (!r.valid) {
      rep.valid = false;
      rep.reason = r.reason;
    }
    return r.valid;
  };
  if (!run("initial", base)) return rep;
  for (std::size_t c = 1; c <= cfg.cycles; ++c) {
    LossWeights w = base;
    w.activation_l1 = cfg.lambda;
    if (!run("cycle " + std::to_string(c), w)) return rep;
    const std::vector<double> imp = edge_importance(m, fit);
    const PruneReport pr = prune(m, imp, cfg.node_threshold, cfg.edge_threshold);
    if (pr.everything_pruned) {
      rep.valid = false;
      rep.reason = "everything-pruned";
      return rep;
    }
    if (cfg.on_prune) cfg.on_prune(c, m);
  }
  run("final", base);
  return rep;
}

Snapshot snapshot(const KanModel& m) { return Snapshot{m}; }

void restore(KanModel& m, const Snapshot& s) {
  if (!(m.shape() == s.state.shape())) throw std::logic_error("restore: snapshot shape mismatch");
  m = s.state;
}

nlohmann::json to_json(const KanModel& m) {
  using nlohmann::json;
  json edges = json::array();
  for (const auto& e : m.edges()) {
    edges.push_back(std::visit(
        overloaded{
            [](const PrunedEdge&) { return json{{"kind", "pruned"}}; },
            [](const SplineEdge& s) {
              return json{{"kind", "spline"},
                          {"degree", s.basis.degree},
                          {"grid", s.basis.resolution()},
                          {"lo", s.basis.range.lo},
                          {"hi", s.basis.range.hi},
                          {"coef", s.basis.coef}};
            },
            [](const RbfEdge& s) {
              return json{{"kind", "rbf"},
                          {"centres", s.basis.size()},
                          {"lo", s.basis.range.lo},
                          {"hi", s.basis.range.hi},
                          {"coef", s.basis.coef}};
            },
            [](const GatedEdge& g) {
              json aff = json::array();
              for (const auto& a : g.affine) aff.push_back({a.alpha, a.beta, a.gamma, a.delta});
              return json{{"kind", "gated"},
                          {"logits", g.logits},
                          {"affine", aff},
                          {"log_scale", g.log_scale},
                          {"active", g.active}};
            },
            [](const SymbolicEdge& s) {
              return json{{"kind", "symbolic"},
                          {"form", std::string(name(s.form))},
                          {"affine", {s.affine.alpha, s.affine.beta, s.affine.gamma, s.affine.delta}}};
            },
        },
        e));
  }
  std::vector<int> alive;
  for (std::size_t u = 0; u < m.shape().units(); ++u) alive.push_back(m.unit_alive(u) ? 1 : 0);
  return json{{"format", "kansr-model"},
              {"version", 1},
              {"shape",
               {{"inputs", m.shape().inputs}, {"additive", m.shape().additive}, {"multiplicative", m.shape().multiplicative}}},
              {"alive", alive},
              {"edges", edges}};
}

KanModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "kansr-model" || j.at("version") != 1) throw ConfigError("checkpoint: unsupported format");
    ModelShape sh{j.at("shape").at("inputs").get<std::size_t>(), j.at("shape").at("additive").get<std::size_t>(),
                  j.at("shape").at("multiplicative").get<std::size_t>()};
    KanModel m(sh, PrunedEdge{});
    const auto& edges = j.at("edges");
    if (edges.size() != m.edge_count()) throw ConfigError("checkpoint: edge count does not match shape");
    for (std::size_t e = 0; e < m.edge_count(); ++e) {
      const auto& je = edges[e];
      const std::string kind = je.at("kind");
      const Range r = je.contains("lo") ? Range{je.at("lo").get<double>(), je.at("hi").get<double>()} : Range{};
      if (kind == "pruned") {
        m.edge(e) = PrunedEdge{};
      } else if (kind == "spline") {
        SplineBasis b(r, je.at("grid").get<std::size_t>(), je.at("degree").get<int>());
        b.coef = je.at("coef").get<std::vector<double>>();
        if (b.coef.size() != b.size() || b.coef.size() != b.resolution() + static_cast<std::size_t>(b.degree))
          throw ConfigError("checkpoint: spline coefficient count");
        m.edge(e) = SplineEdge{std::move(b)};
      } else if (kind == "rbf") {
        RbfBasis b(r, je.at("centres").get<std::size_t>());
        auto coef = je.at("coef").get<std::vector<double>>();
        if (coef.size() != b.size()) throw ConfigError("checkpoint: rbf coefficient count");
        b.coef = std::move(coef);
        m.edge(e) = RbfEdge{std::move(b)};
      } else if (kind == "gated") {
        GatedEdge g;
        g.logits = je.at("logits").get<std::vector<double>>();
        g.log_scale = je.at("log_scale").get<std::vector<double>>();
        g.active = je.at("active").get<std::vector<std::uint8_t>>();
        for (const auto& a : je.at("affine")) g.affine.push_back({a.at(0), a.at(1), a.at(2), a.at(3)});
        if (g.logits.size() != kLibrarySize || g.affine.size() != kLibrarySize || g.active.size() != kLibrarySize ||
            (g.log_scale.size() != 1 && g.log_scale.size() != kLibrarySize))
          throw ConfigError("checkpoint: gated edge sizes");
        m.edge(e) = std::move(g);
      } else if (kind == "symbolic") {
        const auto op = op_from_name(je.at("form").get<std::string>());
        if (!op) throw ConfigError("checkpoint: unknown form");
        const auto& a = je.at("affine");
        m.edge(e) = SymbolicEdge{*op, AffineParams{a.at(0), a.at(1), a.at(2), a.at(3)}};
      } else {
        throw ConfigError("checkpoint: unknown edge kind '" + kind + "'");
      }
    }
    const auto alive = j.at("alive").get<std::vector<int>>();
    if (alive.size() != sh.units()) throw ConfigError("checkpoint: alive mask size");
    for (std::size_t u = 0; u < alive.size(); ++u)
      if (alive[u] == 0) m.prune_unit(u);
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("checkpoint: ") + ex.what());
  }
}

void save_checkpoint(const KanModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << to_json(m).dump(1) << '\n';
}

KanModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("checkpoint: ") + ex.what());
  }
  return model_from_json(j);
}

}  // namespace kansr

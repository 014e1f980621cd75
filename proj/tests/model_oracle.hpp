#pragma once

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

#include "kansr/network.hpp"
#include "oracles.hpp"

namespace oracle {

// Objective written out from predict() and eval_edge().
inline double model_loss(const kansr::KanModel& m, const kansr::Batch& b, const kansr::LossWeights& w) {
  using namespace kansr;
  const ModelShape& sh = m.shape();
  const double n = static_cast<double>(b.size());
  std::vector<double> units(sh.units());
  double total = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto x = b.row(i);
    const double r = m.predict(x) - b.y[i];
    total += r * r / n;
    m.hidden_values(x, units);
    for (std::size_t e = 0; e < m.edge_count(); ++e) {
      if (kind_of(m.edge(e)) == EdgeKind::Pruned) continue;
      const EdgeLocation loc = m.locate(e);
      const double in = loc.layer == 0 ? x[loc.col] : units[loc.col];
      total += w.activation_l1 / n * std::abs(eval_edge(m.edge(e), in));
    }
  }
  for (const auto& e : m.edges())
    if (const auto* g = std::get_if<GatedEdge>(&e)) total += w.gate_entropy * gate_entropy(*g) + w.gate_l1 * gate_l1(*g);
  return total;
}

// Largest relative error of the recorded objective and its gradient against
// model_loss and central differences of it.
inline double worst_gradient_error(const kansr::KanModel& model, const kansr::Batch& b, const kansr::LossWeights& w) {
  using namespace kansr;
  KanModel m = model;
  diff::Tape tape;
  std::vector<double> grad;
  const double value = loss_and_gradient(m, b, w, tape, grad);
  const std::vector<double> p0 = m.parameters();
  if (grad.size() != p0.size()) return INFINITY;
  auto f = [&](const std::vector<double>& q) {
    m.set_parameters(q);
    return model_loss(m, b, w);
  };
  double worst = rel_err(value, model_loss(m, b, w), 1.0);
  for (std::size_t i = 0; i < p0.size(); ++i)
    worst = std::max(worst, rel_err(grad[i], central_diff(f, p0, i, 1e-6), 1e-3));
  return worst;
}

}  // namespace oracle

#include "kansr/gmp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "kansr/error.hpp"

namespace kansr {

void validate(const GmpConfig& cfg) {
  if (cfg.final_k < 1) throw ConfigError("gmp: final top-k must be at least 1");
  if (cfg.final_k > cfg.initial_cap) throw ConfigError("gmp: final top-k exceeds the initial cap");
  if (cfg.initial_cap > kLibrarySize) throw ConfigError("gmp: initial cap exceeds the library size");
  if (cfg.entropy_weight < 0.0 || cfg.l1_weight < 0.0) throw ConfigError("gmp: negative gate penalty weight");
}

std::size_t cap_for_cycle(const GmpConfig& cfg, std::size_t cycle, std::size_t cycles) {
  if (cycles <= 1) return cfg.final_k;
  const double t = static_cast<double>(std::min(cycle, cycles) - 1) / static_cast<double>(cycles - 1);
  const double cap = static_cast<double>(cfg.initial_cap) +
                     t * (static_cast<double>(cfg.final_k) - static_cast<double>(cfg.initial_cap));
  return static_cast<std::size_t>(std::llround(cap));
}

namespace {

double simplex_error(const KanModel& m) {
  double worst = 0.0;
  for (const auto& e : m.edges())
    if (const auto* g = std::get_if<GatedEdge>(&e)) {
      double s = 0.0;
      for (double p : g->probabilities()) s += p;
      worst = std::max(worst, std::abs(s - 1.0));
    }
  return worst;
}

}  // namespace

GmpTrainResult train_gmp(KanModel& m, const Batch& fit, ScheduleConfig sched, const GmpConfig& cfg,
                         std::size_t trace_every) {
  validate(cfg);
  GmpTrainResult res;
  sched.gate_entropy = cfg.entropy_weight;
  sched.gate_l1 = cfg.l1_weight;
  const std::size_t cycles = sched.cycles;

  auto user_step = sched.on_step;
  sched.on_step = [&](std::size_t step, const KanModel& km) {
    res.max_simplex_error = std::max(res.max_simplex_error, simplex_error(km));
    if (trace_every > 0 && step % trace_every == 0) {
      for (std::size_t e = 0; e < km.edge_count(); ++e)
        if (const auto* g = std::get_if<GatedEdge>(&km.edge(e))) {
          const OpId top = gate_argmax(*g);
          res.trace.push_back({step, e, gate_entropy(*g), top, g->probabilities()[form_id(top)]});
        }
    }
    if (user_step) user_step(step, km);
  };
  auto user_prune = sched.on_prune;
  sched.on_prune = [&](std::size_t cycle, KanModel& km) {
    const std::size_t cap = cap_for_cycle(cfg, cycle, cycles);
    for (std::size_t e = 0; e < km.edge_count(); ++e)
      if (auto* g = std::get_if<GatedEdge>(&km.edge(e))) {
        const std::size_t expect = std::min(cap, g->active_count());
        *g = topk_prune(*g, cap);
        if (g->active_count() != expect) res.caps_respected = false;
      }
    res.max_simplex_error = std::max(res.max_simplex_error, simplex_error(km));
    if (user_prune) user_prune(cycle, km);
  };

  res.report = train_schedule(m, fit, sched);
  if (res.report.valid && cycles == 0) {
    // no pruning cycle ran: shortlist once at the end
    for (std::size_t e = 0; e < m.edge_count(); ++e)
      if (auto* g = std::get_if<GatedEdge>(&m.edge(e))) *g = topk_prune(*g, cfg.final_k);
    res.max_simplex_error = std::max(res.max_simplex_error, simplex_error(m));
  }
  res.retained.resize(m.edge_count());
  for (std::size_t e = 0; e < m.edge_count(); ++e)
    if (const auto* g = std::get_if<GatedEdge>(&m.edge(e))) res.retained[e] = g->active_forms();
  return res;
}

void write_gate_trace(std::ostream& out, const std::vector<GateTracePoint>& trace) {
  out << "step,edge_id,entropy,top1_form,top1_pi\n";
  for (const auto& p : trace)
    out << fmt::format("{},{},{:.10g},{},{:.10g}\n", p.step, p.edge, p.entropy, name(p.top_form), p.top_prob);
}

Discretisation discretize(KanModel& m) {
  Discretisation d;
  d.chosen.assign(m.edge_count(), OpId::Zero);
  d.gate_affine.resize(m.edge_count());
  for (std::size_t e = 0; e < m.edge_count(); ++e) {
    if (const auto* g = std::get_if<GatedEdge>(&m.edge(e))) {
      const OpId k = gate_argmax(*g);
      d.chosen[e] = k;
      d.gate_affine[e] = g->affine;
      m.edge(e) = SymbolicEdge{k, g->affine[form_id(k)]};
    }
  }
  return d;
}

GsrResult refine_restricted(KanModel& m, const Batch& fit, const Batch& val,
                            const std::vector<std::vector<OpId>>& retained, const Discretisation& disc,
                            GsrConfig cfg) {
  cfg.pending.clear();
  for (std::size_t e = 0; e < m.edge_count(); ++e)
    if (std::holds_alternative<SymbolicEdge>(m.edge(e)) && e < disc.gate_affine.size() && !disc.gate_affine[e].empty())
      cfg.pending.push_back(e);
  if (cfg.pending.empty()) return {};
  cfg.candidates = [&](std::size_t e) {
    std::vector<OpId> c = e < retained.size() ? retained[e] : std::vector<OpId>{};
    if (const auto* s = std::get_if<SymbolicEdge>(&m.edge(e))) c.push_back(s->form);
    return c;
  };
  cfg.warm_start = [&](std::size_t e, OpId form) -> std::optional<AffineParams> {
    if (e < disc.gate_affine.size() && !disc.gate_affine[e].empty()) return disc.gate_affine[e][form_id(form)];
    return std::nullopt;
  };
  return gsr(m, fit, val, cfg);
}

}  // namespace kansr

#include "kansr/extract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "kansr/rng.hpp"

namespace kansr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool expired(const std::optional<Clock::time_point>& deadline) { return deadline && Clock::now() > *deadline; }

}  // namespace

std::vector<Sample> sample_edge(const EdgeFunction& e, Range r, std::size_t n) {
  std::vector<Sample> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double x = n > 1 ? r.lo + r.width() * static_cast<double>(t) / static_cast<double>(n - 1) : r.lo;
    out[t] = {x, eval_edge(e, x)};
  }
  return out;
}

AutoSymResult autosym(KanModel& m, const Batch& fit, const AutoSymConfig& cfg) {
  AutoSymResult res;
  const std::vector<Range> ranges = edge_input_ranges(m, fit);
  const std::vector<OpId> forms = all_forms();
  // every edge is judged on the unmodified model, so conversion order is irrelevant
  std::vector<std::pair<std::size_t, std::vector<Sample>>> work;
  for (std::size_t e = 0; e < m.edge_count(); ++e)
    if (is_numeric(m.edge(e))) work.emplace_back(e, sample_edge(m.edge(e), ranges[e], cfg.samples));
  for (const auto& [e, samples] : work) {
    if (expired(cfg.deadline)) {
      res.valid = false;
      res.reason = "timeout";
      return res;
    }
    LocalFitOptions lo = cfg.local;
    lo.seed = derive_seed(cfg.local.seed, {e});
    const std::vector<LocalFit> ranked = rank_forms_locally(samples, forms, lo);
    if (ranked.empty() || !std::isfinite(ranked.front().mse)) {
      res.flagged.push_back(e);
      continue;
    }
    res.choices.push_back({e, ranked.front()});
  }
  for (const auto& c : res.choices) m.edge(c.edge) = SymbolicEdge{c.fit.form, c.fit.affine};
  if (cfg.polish_steps > 0) {
    const StageResult r =
        fit_stage(m, fit, StageOptions{cfg.polish_steps, cfg.lr, {}, cfg.deadline, cfg.inject_nonfinite, {}});
    if (!r.valid) {
      res.valid = false;
      res.reason = r.reason;
    }
  }
  return res;
}

GsrResult gsr(KanModel& m, const Batch& fit, const Batch& val, const GsrConfig& cfg) {
  GsrResult res;
  std::vector<std::size_t> pending = cfg.pending;
  if (pending.empty())
    for (std::size_t e = 0; e < m.edge_count(); ++e)
      if (is_numeric(m.edge(e))) pending.push_back(e);
  const std::size_t budget = std::min(cfg.max_edges.value_or(pending.size()), pending.size());
  const StageOptions tune{cfg.tau, cfg.lr, {}, cfg.deadline, false, {}};

  std::vector<double> importance;
  for (std::size_t iter = 0; iter < budget; ++iter) {
    std::erase_if(pending, [&](std::size_t e) { return kind_of(m.edge(e)) == EdgeKind::Pruned; });
    if (pending.empty()) break;
    if (expired(cfg.deadline)) {
      res.valid = false;
      res.reason = "timeout";
      return res;
    }
    if (importance.empty() || !cfg.amortise_importance) importance = edge_importance(m, fit);
    std::size_t pick = pending.front();
    for (std::size_t e : pending)
      if (importance[e] > importance[pick] || (importance[e] == importance[pick] && e < pick)) pick = e;
    std::erase(pending, pick);

    std::vector<OpId> cands = cfg.candidates ? cfg.candidates(pick) : all_forms();
    std::sort(cands.begin(), cands.end(), [](OpId a, OpId b) { return form_id(a) < form_id(b); });
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

    const Range r = edge_input_ranges(m, fit)[pick];
    const std::vector<Sample> samples = sample_edge(m.edge(pick), r, cfg.samples);
    LocalFitOptions lo = cfg.local;
    lo.seed = derive_seed(cfg.local.seed, {pick});

    const Snapshot snap = snapshot(m);
    const std::size_t first_trial = res.trials.size();
    std::optional<std::size_t> best;
    std::optional<KanModel> best_model;
    std::vector<AffineParams> starts;
    for (OpId form : cands) {
      const auto t0 = Clock::now();
      std::optional<AffineParams> warm = cfg.warm_start ? cfg.warm_start(pick, form) : std::nullopt;
      if (!warm) warm = fit_affine_local(form, samples, lo).affine;
      starts.push_back(*warm);
      m.edge(pick) = SymbolicEdge{form, *warm};
      double loss = kInf;
      if (cfg.tau > 0) {
        const StageResult sr = fit_stage(m, fit, tune);
        res.finetune_steps += sr.steps_run;
        if (!sr.valid && sr.reason == "timeout") {
          restore(m, snap);
          res.valid = false;
          res.reason = "timeout";
          return res;
        }
        if (sr.valid) loss = mean_squared_error(m, val);
      } else {
        loss = mean_squared_error(m, val);
      }
      if (!std::isfinite(loss)) loss = kInf;
      const std::size_t idx = res.trials.size();
      if (std::isfinite(loss) && (!best || loss < res.trials[*best].loss)) {
        best = idx;
        if (cfg.reuse_winning_trial && cfg.post_commit) best_model = m;
      }
      restore(m, snap);
      if (cfg.check_restore && !(m == snap.state)) ++res.restore_mismatches;
      res.trials.push_back({cfg.run_id, pick, form, loss, false, cfg.record_timing ? elapsed_ms(t0) : 0.0});
    }
    if (!best) {
      res.flagged.push_back(pick);
      continue;
    }
    res.trials[*best].committed = true;
    res.committed_edges.push_back(pick);
    if (best_model) {
      m = std::move(*best_model);
    } else {
      m.edge(pick) = SymbolicEdge{res.trials[*best].form, starts[*best - first_trial]};
      if (cfg.post_commit && cfg.tau > 0) {
        const StageResult sr = fit_stage(m, fit, tune);
        res.finetune_steps += sr.steps_run;
        if (!sr.valid) {
          res.valid = false;
          res.reason = sr.reason;
          return res;
        }
      }
    }
  }
  return res;
}

void write_trial_log(std::ostream& out, const std::vector<TrialRecord>& trials) {
  out << "run_id,edge_id,form_id,J,committed,wall_ms\n";
  for (const auto& t : trials)
    out << fmt::format("{},{},{},{:.17g},{},{:.3f}\n", t.run_id, t.edge, form_id(t.form), t.loss, t.committed ? 1 : 0,
                       t.wall_ms);
}

Composition compose_expression(const KanModel& m, const std::vector<std::string>& variable_names) {
  const ModelShape& sh = m.shape();
  Composition c;
  std::vector<std::string> names = variable_names;
  if (names.empty())
    for (std::size_t i = 0; i < sh.inputs; ++i) names.push_back("x" + std::to_string(i + 1));

  auto leaf = [&](std::size_t id, const expr::Tree& x) -> std::optional<expr::Tree> {
    const EdgeFunction& e = m.edge(id);
    if (kind_of(e) == EdgeKind::Pruned) return std::nullopt;
    if (const auto* s = std::get_if<SymbolicEdge>(&e)) return expr::affine_leaf(s->form, s->affine, x);
    c.placeholders.push_back(id);
    names.push_back("phi" + std::to_string(id));
    return expr::variable(names.size() - 1);
  };
  auto sum_of = [](std::vector<expr::Tree> terms) {
    if (terms.empty()) return expr::constant(0.0);
    if (terms.size() == 1) return terms.front();
    return expr::add(std::move(terms));
  };

  std::vector<expr::Tree> sub(sh.subnodes());
  for (std::size_t j = 0; j < sh.subnodes(); ++j) {
    std::vector<expr::Tree> terms;
    for (std::size_t i = 0; i < sh.inputs; ++i)
      if (auto t = leaf(m.hidden_edge_id(j, i), expr::variable(i))) terms.push_back(*t);
    sub[j] = sum_of(std::move(terms));
  }
  std::vector<expr::Tree> out_terms;
  for (std::size_t u = 0; u < sh.units(); ++u) {
    if (!m.unit_alive(u)) continue;
    expr::Tree unit = u < sh.additive
                          ? sub[u]
                          : expr::mul({sub[sh.additive + 2 * (u - sh.additive)], sub[sh.additive + 2 * (u - sh.additive) + 1]});
    if (auto t = leaf(m.output_edge_id(u), unit)) out_terms.push_back(*t);
  }
  c.tree = expr::simplify(sum_of(std::move(out_terms)));
  c.text = expr::serialize(c.tree, expr::SerializeOptions{6, names});
  return c;
}

}  // namespace kansr

#pragma once

// Gated matching pursuit: training a gated model with gate sparsity and a
// shrinking top-k operator cap, argmax discretisation, and greedy refinement
// restricted to each edge's retained operators.

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "kansr/extract.hpp"
#include "kansr/network.hpp"

namespace kansr {

struct GmpConfig {
  double entropy_weight = 1e-3;
  double l1_weight = 1e-2;
  std::size_t initial_cap = 10;
  std::size_t final_k = 5;
  bool refine = true;
};

/// Validates final_k <= initial_cap <= library size and final_k >= 1.
void validate(const GmpConfig& cfg);

/// Operator cap after prune-and-refit cycle `cycle` (1-based) out of `cycles`:
/// linear from initial_cap to final_k.
std::size_t cap_for_cycle(const GmpConfig& cfg, std::size_t cycle, std::size_t cycles);

struct GateTracePoint {
  std::size_t step;
  std::size_t edge;
  double entropy;
  OpId top_form;
  double top_prob;
};

struct GmpTrainResult {
  TrainReport report;
  /// Active operators of every gated edge after the last pruning (empty for
  /// pruned edges).
  std::vector<std::vector<OpId>> retained;
  /// Largest |sum(pi) - 1| seen over all gated edges after every optimiser
  /// step and every prune.
  double max_simplex_error = 0.0;
  /// Active counts observed right after each top-k prune must equal the cap.
  bool caps_respected = true;
  std::vector<GateTracePoint> trace;
};

/// Trains a gated model with the schedule of `sched`; gate regularisation
/// weights come from cfg. trace_every > 0 records the gate trajectory every
/// that many steps.
GmpTrainResult train_gmp(KanModel& m, const Batch& fit, ScheduleConfig sched, const GmpConfig& cfg,
                         std::size_t trace_every = 0);

void write_gate_trace(std::ostream& out, const std::vector<GateTracePoint>& trace);

struct Discretisation {
  /// Form chosen per edge id (only meaningful for formerly gated edges).
  std::vector<OpId> chosen;
  /// Per-operator affine values of each gated edge at discretisation time.
  std::vector<std::vector<AffineParams>> gate_affine;
};

/// Replaces every gated edge with the symbolic edge of its most probable
/// operator and that operator's affine parameters; compression is dropped.
Discretisation discretize(KanModel& m);

/// GSR over the symbolic edges with each edge's candidates restricted to its
/// retained operators (plus its current form). Warm starts come from the
/// gated affine values.
GsrResult refine_restricted(KanModel& m, const Batch& fit, const Batch& val,
                            const std::vector<std::vector<OpId>>& retained, const Discretisation& disc,
                            GsrConfig cfg);

}  // namespace kansr

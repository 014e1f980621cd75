#pragma once

// Post-hoc symbolic extraction from a trained model: the per-edge AutoSym
// baseline, greedy in-context symbolic regression (GSR), and composition of a
// fully symbolic model into one expression.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kansr/expr.hpp"
#include "kansr/network.hpp"
#include "kansr/oplib.hpp"

namespace kansr {

/// Uniform samples of an edge's current function over its input range.
std::vector<Sample> sample_edge(const EdgeFunction& e, Range r, std::size_t n);

struct AutoSymConfig {
  std::size_t samples = 64;
  std::size_t polish_steps = 200;
  double lr = 1e-2;
  LocalFitOptions local;
  std::optional<Clock::time_point> deadline;
  bool inject_nonfinite = false;
};

struct EdgeChoice {
  std::size_t edge;
  LocalFit fit;
};

struct AutoSymResult {
  bool valid = true;
  std::string reason;
  std::vector<EdgeChoice> choices;
  /// Edges where every form failed; they stay numeric.
  std::vector<std::size_t> flagged;
};

/// Replaces every active numeric edge by its best local fit, all edges judged
/// on the model as given, then polishes the whole model.
AutoSymResult autosym(KanModel& m, const Batch& fit, const AutoSymConfig& cfg = {});

struct TrialRecord {
  std::string run_id;
  std::size_t edge = 0;
  OpId form = OpId::Identity;
  double loss = 0.0;  // validation mse after fine-tuning; +inf when invalid
  bool committed = false;
  double wall_ms = 0.0;
};

struct GsrConfig {
  std::size_t tau = 100;
  /// Maximum number of edges to convert; empty = every pending edge.
  std::optional<std::size_t> max_edges;
  /// Edges to convert; empty = every active numeric edge.
  std::vector<std::size_t> pending;
  /// Candidate forms per edge id; edges not listed use the full library.
  std::function<std::vector<OpId>(std::size_t edge)> candidates;
  /// Affine warm start per (edge, form); when it returns nothing the local
  /// fit against the sampled edge curve is used.
  std::function<std::optional<AffineParams>(std::size_t edge, OpId form)> warm_start;
  bool post_commit = true;
  /// Keep importance from the first selection instead of recomputing.
  bool amortise_importance = false;
  /// Commit by keeping the fine-tuned model of the winning trial. Equivalent
  /// to restore, replace and fine-tune again because fine-tuning is
  /// deterministic.
  bool reuse_winning_trial = true;
  /// Compare the model against its snapshot after every trial.
  bool check_restore = false;
  bool record_timing = true;
  std::size_t samples = 64;
  double lr = 1e-2;
  LocalFitOptions local;
  std::string run_id = "run";
  std::optional<Clock::time_point> deadline;
  bool inject_nonfinite = false;
};

struct GsrResult {
  bool valid = true;
  std::string reason;
  std::vector<TrialRecord> trials;
  std::vector<std::size_t> committed_edges;
  std::vector<std::size_t> flagged;
  /// Number of optimisation steps spent on fine-tuning (trials + commits).
  std::size_t finetune_steps = 0;
  std::size_t restore_mismatches = 0;
};

GsrResult gsr(KanModel& m, const Batch& fit, const Batch& val, const GsrConfig& cfg = {});

/// CSV header plus one row per trial: run_id,edge_id,form_id,J,committed,wall_ms
void write_trial_log(std::ostream& out, const std::vector<TrialRecord>& trials);

struct Composition {
  expr::Tree tree;
  std::string text;
  /// Numeric edges that appear as placeholder variables phi<id>.
  std::vector<std::size_t> placeholders;
};

/// Composes the symbolic model into one simplified expression. Variables are
/// named x1..xd unless names are given.
Composition compose_expression(const KanModel& m, const std::vector<std::string>& variable_names = {});

}  // namespace kansr

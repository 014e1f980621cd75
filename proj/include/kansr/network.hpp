#pragma once

// MultKAN model with one hidden layer of additive and multiplication units and
// a scalar output: edge importance, pruning, the staged training schedule,
// snapshots and JSON checkpoints.
//
// Layout. The hidden layer has `additive` units that sum their incoming edges
// and `multiplicative` units that own two summation sub-nodes each and output
// the product of the two sums. Hidden edges connect every input to every
// sub-node (additive units first, then the two sub-nodes of each
// multiplication unit). Output edges connect every hidden unit to the output,
// which sums them. Edge ids enumerate hidden edges row-major (sub-node, input)
// followed by output edges (unit).

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "kansr/basis.hpp"
#include "kansr/diff.hpp"
#include "kansr/gates.hpp"
#include "kansr/oplib.hpp"

namespace kansr {

struct PrunedEdge {};
struct SplineEdge {
  SplineBasis basis;
};
struct RbfEdge {
  RbfBasis basis;
};

using EdgeFunction = std::variant<PrunedEdge, SplineEdge, RbfEdge, GatedEdge, SymbolicEdge>;

enum class EdgeKind : std::uint8_t { Pruned, Spline, Rbf, Gated, Symbolic };

EdgeKind kind_of(const EdgeFunction& e);
bool is_numeric(const EdgeFunction& e);
std::size_t parameter_count(const EdgeFunction& e);
double eval_edge(const EdgeFunction& e, double x);
std::pair<double, double> eval_edge_with_derivative(const EdgeFunction& e, double x);

enum class NumericBasis : std::uint8_t { Spline, Rbf };

struct ModelShape {
  std::size_t inputs = 1;
  std::size_t additive = 5;
  std::size_t multiplicative = 2;

  [[nodiscard]] std::size_t units() const { return additive + multiplicative; }
  [[nodiscard]] std::size_t subnodes() const { return additive + 2 * multiplicative; }
  bool operator==(const ModelShape&) const = default;
};

/// Where an edge sits. layer 0: row = sub-node, col = input. layer 1: row = 0,
/// col = hidden unit.
struct EdgeLocation {
  int layer;
  std::size_t row;
  std::size_t col;
};

/// Row-major sample block: x has size() * dim entries.
struct Batch {
  std::span<const double> x;
  std::span<const double> y;
  std::size_t dim = 0;

  [[nodiscard]] std::size_t size() const { return y.size(); }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return x.subspan(i * dim, dim); }
};

struct NumericInit {
  NumericBasis basis = NumericBasis::Spline;
  std::size_t grid = 20;
  int degree = 3;
  double noise = 0.1;
  std::uint64_t seed = 1;
};

struct GatedInit {
  double log_scale = 0.0;
  bool scale_per_operator = false;
  std::uint64_t seed = 1;
};

class KanModel {
 public:
  KanModel() = default;
  /// Every edge starts as the given kind (PrunedEdge placeholders included).
  KanModel(ModelShape shape, EdgeFunction prototype);

  /// Numeric model. Hidden-edge grids span their input column of `sample`;
  /// output-edge grids span the padded hidden activation range observed on
  /// `sample` at initialisation.
  static KanModel numeric(ModelShape shape, const NumericInit& init, const Batch& sample);
  /// Gated model, affine parameters of each operator initialised inside its
  /// domain for the observed input range of the edge.
  static KanModel gated(ModelShape shape, const GatedInit& init, const Batch& sample);

  [[nodiscard]] const ModelShape& shape() const { return shape_; }
  [[nodiscard]] std::size_t edge_count() const { return edges_.size(); }
  [[nodiscard]] std::size_t hidden_edge_count() const { return shape_.subnodes() * shape_.inputs; }
  [[nodiscard]] std::size_t hidden_edge_id(std::size_t subnode, std::size_t input) const {
    return subnode * shape_.inputs + input;
  }
  [[nodiscard]] std::size_t output_edge_id(std::size_t unit) const { return hidden_edge_count() + unit; }
  [[nodiscard]] EdgeLocation locate(std::size_t edge_id) const;
  /// Hidden unit fed by a sub-node.
  [[nodiscard]] std::size_t unit_of_subnode(std::size_t subnode) const;

  [[nodiscard]] const EdgeFunction& edge(std::size_t id) const { return edges_.at(id); }
  EdgeFunction& edge(std::size_t id) { return edges_.at(id); }
  [[nodiscard]] const std::vector<EdgeFunction>& edges() const { return edges_; }

  [[nodiscard]] bool unit_alive(std::size_t unit) const { return alive_.at(unit) != 0; }
  /// Masks a hidden unit and prunes every incident edge.
  void prune_unit(std::size_t unit);
  [[nodiscard]] std::size_t active_edge_count() const;

  /// Hidden unit outputs for one input row.
  void hidden_values(std::span<const double> x, std::span<double> units) const;
  [[nodiscard]] double predict(std::span<const double> x) const;

  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);
  /// Offset of each edge's first parameter in parameters().
  [[nodiscard]] std::vector<std::size_t> parameter_offsets() const;

  bool operator==(const KanModel& other) const;

 private:
  ModelShape shape_;
  std::vector<EdgeFunction> edges_;
  std::vector<std::uint8_t> alive_;
};

double mean_squared_error(const KanModel& m, const Batch& b);

struct LossWeights {
  double activation_l1 = 0.0;
  double gate_entropy = 0.0;
  double gate_l1 = 0.0;
};

/// Records the full-batch training objective on `tape` and returns its value;
/// grad receives d(objective)/d(parameters()).
double loss_and_gradient(const KanModel& m, const Batch& b, const LossWeights& w, diff::Tape& tape,
                         std::vector<double>& grad);

/// Layer-normalised mean |phi_e| over the batch, indexed by edge id. Pruned
/// edges score 0.
std::vector<double> edge_importance(const KanModel& m, const Batch& b);

/// Observed input range of each edge over the batch (hidden edges: their
/// input column, output edges: their unit's activation).
std::vector<Range> edge_input_ranges(const KanModel& m, const Batch& b);

/// Moves every numeric edge's grid onto its observed input range (padded by
/// `pad` of the width on each side) and refits the coefficients so the edge
/// function is kept on the old range.
void refresh_grids(KanModel& m, const Batch& b, double pad = 0.1);

struct PruneReport {
  std::vector<std::size_t> pruned_units;
  std::size_t pruned_edges = 0;
  bool everything_pruned = false;
};

/// Masks hidden units whose strongest incoming and strongest outgoing edge
/// both score below node_threshold; removes edges scoring below
/// edge_threshold when it is positive.
PruneReport prune(KanModel& m, std::span<const double> importance, double node_threshold, double edge_threshold);

using Clock = std::chrono::steady_clock;

struct StageOptions {
  std::size_t steps = 200;
  double lr = 1e-2;
  LossWeights weights;
  std::optional<Clock::time_point> deadline;
  bool inject_nonfinite = false;
  /// Called after every optimiser step (1-based step within the stage).
  std::function<void(std::size_t step, const KanModel&)> on_step;
};

struct StageResult {
  bool valid = true;
  std::string reason;
  double final_loss = 0.0;
  std::size_t steps_run = 0;
};

/// Full-batch Adam fit with a fresh optimiser state. On a non-finite loss or
/// gradient the model keeps its last finite parameters and the result is
/// flagged invalid.
StageResult fit_stage(KanModel& m, const Batch& b, const StageOptions& opt);

struct ScheduleConfig {
  std::size_t steps = 200;
  double lr = 1e-2;
  double lambda = 1e-2;
  std::size_t cycles = 3;
  double node_threshold = 0.1;
  double edge_threshold = 0.0;
  double gate_entropy = 0.0;
  double gate_l1 = 0.0;
  std::optional<Clock::time_point> deadline;
  bool inject_nonfinite = false;
  bool refresh_grids = true;
  /// Called after every optimiser step with the running step count.
  std::function<void(std::size_t step, const KanModel&)> on_step;
  /// Called after node pruning in every prune-and-refit cycle (1-based).
  std::function<void(std::size_t cycle, KanModel&)> on_prune;
};

struct TrainReport {
  bool valid = true;
  std::string reason;
  std::vector<std::string> stages;
  std::vector<double> stage_losses;
  std::size_t total_steps = 0;
};

/// Initial unregularised fit, `cycles` rounds of (regularised fit, prune),
/// then a final unregularised fit.
TrainReport train_schedule(KanModel& m, const Batch& fit, const ScheduleConfig& cfg);

/// Full model state copy.
struct Snapshot {
  KanModel state;
};
Snapshot snapshot(const KanModel& m);
/// Throws std::logic_error when the snapshot belongs to a different shape.
void restore(KanModel& m, const Snapshot& s);

nlohmann::json to_json(const KanModel& m);
KanModel model_from_json(const nlohmann::json& j);
void save_checkpoint(const KanModel& m, const std::string& path);
KanModel load_checkpoint(const std::string& path);

}  // namespace kansr

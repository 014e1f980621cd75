#pragma once

// One-factor-at-a-time sweeps around a reference configuration: plan files,
// run enumeration, the five extraction pipelines, resumable execution and the
// results CSV.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kansr/data.hpp"
#include "kansr/extract.hpp"
#include "kansr/gmp.hpp"
#include "kansr/network.hpp"

namespace kansr {

enum class Pipeline : std::uint8_t { AutoSym, FastKanAutoSym, Gsr, FastKanGsr, Gmp };

inline constexpr std::size_t kPipelineCount = 5;
std::string_view pipeline_id(Pipeline p);
std::string_view pipeline_display(Pipeline p);
/// Accepts the id ("fastkan_gsr") or the display name ("FastKAN+GSR").
std::optional<Pipeline> pipeline_from_string(std::string_view s);
std::vector<Pipeline> all_pipelines();

struct RunConfig {
  std::size_t width = 5;
  double lambda = 1e-2;
  std::size_t cycles = 3;
  std::uint64_t seed = 1;

  bool operator==(const RunConfig&) const = default;
};

enum class Factor : std::uint8_t { Width, Lambda, Cycles, Seed };
std::string_view factor_name(Factor f);

struct OfatRun {
  RunConfig config;
  Factor factor;
  bool is_reference = false;
};

struct TrainingBudget {
  std::size_t steps = 200;
  double lr = 1e-2;
  std::size_t tau = 100;
  std::size_t polish_steps = 200;
  std::size_t multiplicative = 2;
  std::size_t grid = 20;
  std::size_t rbf_centres = 20;
  double node_threshold = 0.1;
  double edge_threshold = 0.0;
  /// Cap on GSR conversions; 0 converts every active edge.
  std::size_t max_edges = 0;
  GmpConfig gmp;
};

struct FaultSpec {
  std::string task;
  Pipeline pipeline;
  std::optional<RunConfig> config;  // empty = every configuration
};

struct SweepPlan {
  std::string manifest;  // resolved against the plan file's directory
  std::vector<std::string> tasks;
  std::vector<std::size_t> widths{5, 10, 20, 50, 100};
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<std::size_t> cycles{1, 3, 5};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  RunConfig reference{5, 1e-2, 3, 1};
  std::vector<Pipeline> pipelines = all_pipelines();
  Caps caps;
  std::uint64_t data_seed = 1;
  TrainingBudget budget;
  double timeout_s = 600.0;
  std::vector<FaultSpec> faults;
};

SweepPlan plan_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const SweepPlan& p);
/// Parses a plan file; a relative manifest path is resolved against the plan
/// file's directory.
SweepPlan load_plan(const std::string& path);

/// Per-factor sweeps in the order width, lambda, cycles, seed, holding the
/// other factors at the reference. The reference appears once per factor.
/// Throws ConfigError when the reference is missing from a level set.
std::vector<OfatRun> enumerate_ofat(const SweepPlan& plan);
/// Distinct configurations in first-appearance order.
std::vector<RunConfig> unique_configs(const std::vector<OfatRun>& runs);

struct RunResult {
  std::string dataset;
  Pipeline pipeline = Pipeline::AutoSym;
  RunConfig config;
  double test_mse = 0.0;
  bool valid = false;
  std::string reason;
  std::string expression;
  double wall_ms = 0.0;
};

struct RunOptions {
  std::optional<Clock::time_point> deadline;
  bool inject_nonfinite = false;
  bool record_timing = true;
  std::string run_id = "run";
};

/// Everything a single pipeline run produces.
struct PipelineOutput {
  RunResult result;
  KanModel trained;  // after the training schedule, before extraction
  KanModel final_model;
  TrainReport train_report;
  std::vector<TrialRecord> trials;
  std::size_t finetune_steps = 0;
  std::size_t gsr_edges = 0;
  std::vector<GateTracePoint> gate_trace;
  std::vector<std::string> notes;
};

PipelineOutput run_pipeline_full(const TaskSpec& task, const Dataset& data, Pipeline pipeline, const RunConfig& cfg,
                                 const TrainingBudget& budget, const RunOptions& opt = {});
RunResult run_pipeline(const TaskSpec& task, const Dataset& data, Pipeline pipeline, const RunConfig& cfg,
                       const TrainingBudget& budget, const RunOptions& opt = {});

/// Extraction on an already trained numeric model (the extract command).
PipelineOutput extract_from_model(const KanModel& trained, const TaskSpec& task, const Dataset& data,
                                  Pipeline pipeline, const RunConfig& cfg, const TrainingBudget& budget,
                                  const RunOptions& opt = {});

struct SweepOptions {
  std::size_t threads = 1;
  /// Completed-run ledger for resuming; empty disables it.
  std::string ledger_path;
  bool record_timing = true;
  std::function<void(const RunResult&, std::size_t done, std::size_t total)> on_result;
};

/// Runs every (task, OFAT run, pipeline) row in plan order. Duplicate
/// reference rows reuse one computed result. Failures become invalid rows.
std::vector<RunResult> run_sweep(const SweepPlan& plan, const std::vector<TaskSpec>& tasks,
                                 const SweepOptions& opt = {});

void write_results_header(std::ostream& out);
void write_result_row(std::ostream& out, const RunResult& r);
void write_results(std::ostream& out, const std::vector<RunResult>& rows);
/// Throws ConfigError on a header or row that does not match the schema.
std::vector<RunResult> read_results(std::istream& in);
std::vector<RunResult> read_results_file(const std::string& path);

struct OfatDistribution {
  std::string dataset;
  Pipeline pipeline;
  std::vector<double> samples;  // valid test MSEs of distinct configurations
  std::size_t n_invalid = 0;
};

/// One distribution per (dataset, pipeline) in first-appearance order of the
/// datasets and pipeline order within each. Duplicate configurations count
/// once. With exclude_seed_factor, rows whose seed differs from the reference
/// seed (the most frequent seed of the group) are left out.
std::vector<OfatDistribution> build_distributions(const std::vector<RunResult>& rows, bool exclude_seed_factor = true);

struct SeedSummary {
  std::string dataset;
  Pipeline pipeline;
  std::size_t n_valid = 0;
  std::size_t n_seeds = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one value
};

/// Mean and standard deviation over seeds at the reference hyper-parameters
/// (the most frequent (m, lambda, cycles) of each group).
std::vector<SeedSummary> seed_sensitivity(const std::vector<RunResult>& rows);

}  // namespace kansr

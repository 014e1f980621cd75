// kansr: train / extract / sweep / report / selftest

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "kansr/basis.hpp"
#include "kansr/data.hpp"
#include "kansr/error.hpp"
#include "kansr/network.hpp"
#include "kansr/report.hpp"
#include "kansr/stats.hpp"
#include "kansr/sweep.hpp"

namespace fs = std::filesystem;
using namespace kansr;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRunFailure = 3;

std::size_t env_threads() {
  const char* v = std::getenv("KANSR_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(fmt::format("KANSR_THREADS must be a positive integer, got '{}'", v));
  return static_cast<std::size_t>(n);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  return f;
}

struct RunArgs {
  std::string manifest;
  std::string plan;
  std::string task;
  std::string pipeline = "gsr";
  std::uint64_t data_seed = 1;
  RunConfig config;
  Caps caps;
  TrainingBudget budget;
  double timeout_s = 600.0;
  std::string out;
  bool inject = false;
  bool no_timing = false;
};

void add_run_options(CLI::App* c, RunArgs& a) {
  c->add_option("--manifest", a.manifest, "Task manifest (JSON)");
  c->add_option("--plan", a.plan, "Take manifest, caps, budget and timeout from a plan file");
  c->add_option("--task", a.task, "Task name")->required();
  c->add_option("--pipeline", a.pipeline, "autosym | fastkan_autosym | gsr | fastkan_gsr | gmp")
      ->capture_default_str();
  c->add_option("--width", a.config.width, "Additive hidden units")->capture_default_str();
  c->add_option("--lambda", a.config.lambda, "Sparsity weight")->capture_default_str();
  c->add_option("--cycles", a.config.cycles, "Prune-and-refit cycles")->capture_default_str();
  c->add_option("--data-seed", a.data_seed, "Seed for dataset sampling")->capture_default_str();
  c->add_option("--train-n", a.caps.train, "Training rows")->capture_default_str();
  c->add_option("--test-n", a.caps.test, "Test rows")->capture_default_str();
  c->add_option("--steps", a.budget.steps, "Adam steps per training stage")->capture_default_str();
  c->add_option("--lr", a.budget.lr, "Adam learning rate")->capture_default_str();
  c->add_option("--tau", a.budget.tau, "Fine-tune steps per candidate trial")->capture_default_str();
  c->add_option("--polish-steps", a.budget.polish_steps, "Steps after extraction")->capture_default_str();
  c->add_option("--max-edges", a.budget.max_edges, "Cap on converted edges (0 = all)")->capture_default_str();
  c->add_option("--timeout", a.timeout_s, "Per-run wall-clock limit in seconds")->capture_default_str();
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_flag("--inject-nonfinite", a.inject, "Force a non-finite loss mid-training (fault drill)");
  c->add_flag("--no-timing", a.no_timing, "Write 0 for wall-clock columns");
}

struct Resolved {
  TaskSpec task;
  Dataset data;
  Pipeline pipeline;
  RunOptions opt;
};

Resolved resolve(RunArgs& a, const CLI::App* c) {
  if (!a.plan.empty()) {
    const SweepPlan p = load_plan(a.plan);
    if (a.manifest.empty()) a.manifest = p.manifest;
    if (c->count("--train-n") == 0) a.caps.train = p.caps.train;
    if (c->count("--test-n") == 0) a.caps.test = p.caps.test;
    if (c->count("--data-seed") == 0) a.data_seed = p.data_seed;
    if (c->count("--timeout") == 0) a.timeout_s = p.timeout_s;
    TrainingBudget b = p.budget;
    if (c->count("--steps")) b.steps = a.budget.steps;
    if (c->count("--lr")) b.lr = a.budget.lr;
    if (c->count("--tau")) b.tau = a.budget.tau;
    if (c->count("--polish-steps")) b.polish_steps = a.budget.polish_steps;
    if (c->count("--max-edges")) b.max_edges = a.budget.max_edges;
    a.budget = b;
  }
  if (a.manifest.empty()) throw ConfigError("either --manifest or --plan is required");
  const auto pipeline = pipeline_from_string(a.pipeline);
  if (!pipeline) throw ConfigError("unknown pipeline '" + a.pipeline + "'");
  if (a.config.width == 0) throw ConfigError("--width must be positive");
  if (a.caps.train < 2 || a.caps.test < 1) throw ConfigError("need at least 2 training and 1 test rows");
  const std::vector<TaskSpec> tasks = load_manifest(a.manifest);
  Resolved r{find_task(tasks, a.task), {}, *pipeline, {}};
  r.data = sample_dataset(r.task, a.data_seed, a.caps);
  r.opt.deadline =
      Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(a.timeout_s));
  r.opt.inject_nonfinite = a.inject;
  r.opt.record_timing = !a.no_timing;
  r.opt.run_id = fmt::format("{}/{}/s{}", a.task, a.pipeline, a.config.seed);
  return r;
}

void write_outputs(const fs::path& dir, const PipelineOutput& out, bool write_trained) {
  fs::create_directories(dir);
  if (write_trained) save_checkpoint(out.trained, (dir / "trained.json").string());
  {
    nlohmann::json j{{"dataset", out.result.dataset},
                     {"pipeline", std::string(pipeline_id(out.result.pipeline))},
                     {"valid", out.result.valid},
                     {"reason", out.result.reason},
                     {"expression", out.result.expression}};
    j["test_mse"] = out.result.valid ? nlohmann::json(out.result.test_mse) : nlohmann::json(nullptr);
    if (out.result.valid) j["model"] = to_json(out.final_model);
    auto f = open_out(dir / "symbolic.json");
    f << j.dump(2) << '\n';
  }
  {
    auto f = open_out(dir / "expression.txt");
    f << (out.result.valid ? out.result.expression : "N/A") << '\n';
  }
  {
    auto f = open_out(dir / "trials.csv");
    write_trial_log(f, out.trials);
  }
  if (!out.gate_trace.empty()) {
    auto f = open_out(dir / "gate_trace.csv");
    write_gate_trace(f, out.gate_trace);
  }
  {
    auto f = open_out(dir / "result.csv");
    write_results(f, {out.result});
  }
  auto log = open_out(dir / "run.log");
  const auto& rep = out.train_report;
  for (std::size_t i = 0; i < rep.stages.size(); ++i)
    log << fmt::format("stage {:<10} loss {:.6g}\n", rep.stages[i],
                       i < rep.stage_losses.size() ? rep.stage_losses[i] : std::nan(""));
  log << fmt::format("training steps {}\n", rep.total_steps);
  if (!out.trials.empty())
    log << fmt::format("candidate trials {} over {} edges, fine-tune steps {}\n", out.trials.size(), out.gsr_edges,
                       out.finetune_steps);
  for (const auto& n : out.notes) log << "note: " << n << '\n';
  if (out.result.valid) log << fmt::format("test mse {:.6g}\nexpression {}\n", out.result.test_mse, out.result.expression);
  else log << "invalid run: " << out.result.reason << '\n';
}

int report_result(const RunResult& r) {
  if (!r.valid) {
    std::cout << fmt::format("{} {}: invalid ({})\n", r.dataset, pipeline_display(r.pipeline), r.reason);
    return kExitRunFailure;
  }
  std::cout << fmt::format("{} {}: test mse {}\n{}\n", r.dataset, pipeline_display(r.pipeline),
                           report::sci(r.test_mse), r.expression);
  return 0;
}

int cmd_train(RunArgs& a, const CLI::App* c) {
  Resolved r = resolve(a, c);
  const PipelineOutput out = run_pipeline_full(r.task, r.data, r.pipeline, a.config, a.budget, r.opt);
  write_outputs(a.out, out, true);
  return report_result(out.result);
}

int cmd_extract(RunArgs& a, const std::string& checkpoint, const CLI::App* c) {
  Resolved r = resolve(a, c);
  const KanModel trained = load_checkpoint(checkpoint);
  const PipelineOutput out = extract_from_model(trained, r.task, r.data, r.pipeline, a.config, a.budget, r.opt);
  write_outputs(a.out, out, false);
  return report_result(out.result);
}

int cmd_sweep(const std::string& plan_path, std::uint64_t seed, const std::string& out_dir, std::string ledger,
              bool no_timing, bool quiet) {
  SweepPlan plan = load_plan(plan_path);
  plan.data_seed = seed;
  const std::vector<TaskSpec> tasks = load_manifest(plan.manifest);
  fs::create_directories(out_dir);
  SweepOptions so;
  so.threads = env_threads();
  so.ledger_path = ledger.empty() ? (fs::path(out_dir) / "ledger.csv").string() : ledger;
  so.record_timing = !no_timing;
  if (!quiet)
    so.on_result = [](const RunResult& r, std::size_t done, std::size_t total) {
      std::cerr << fmt::format("[{}/{}] {} {} m={} lambda={} cycles={} seed={}: {}\n", done, total, r.dataset,
                               pipeline_id(r.pipeline), r.config.width, r.config.lambda, r.config.cycles,
                               r.config.seed, r.valid ? report::sci(r.test_mse) : "N/A (" + r.reason + ")");
    };
  const std::vector<RunResult> rows = run_sweep(plan, tasks, so);
  {
    auto f = open_out(fs::path(out_dir) / "results.csv");
    write_results(f, rows);
  }
  std::size_t invalid = 0;
  for (const auto& r : rows) invalid += r.valid ? 0 : 1;
  std::cout << fmt::format("{} rows written to {}, {} invalid\n", rows.size(),
                           (fs::path(out_dir) / "results.csv").string(), invalid);
  return invalid == 0 ? 0 : kExitRunFailure;
}

int cmd_report(const std::string& results, const std::string& out_dir, std::size_t bootstrap) {
  const std::vector<RunResult> rows = read_results_file(results);
  if (rows.empty()) throw ConfigError("results file has no rows");
  report::AnalysisOptions opt;
  opt.bootstrap = bootstrap;
  report::write_report(rows, out_dir, opt);
  std::cout << "report written to " << out_dir << '\n';
  return 0;
}

// Fast internal consistency checks.
int cmd_selftest() {
  int failures = 0;
  auto check = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "PASS " : "FAIL ") << what << '\n';
    failures += ok ? 0 : 1;
  };

  {
    SplineBasis s(Range{-1.0, 2.0}, 8);
    double worst = 0.0;
    BasisWindow w;
    for (int i = 0; i <= 200; ++i) {
      s.window(-1.0 + 3.0 * i / 200.0, w);
      double sum = 0.0;
      for (double v : w.values) sum += v;
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    check(worst < 1e-12, "spline partition of unity");
  }
  {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> x(40);
    std::vector<double> y(20);
    for (auto& v : x) v = u(rng);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::sin(x[2 * i]) * x[2 * i + 1];
    const Batch b{x, y, 2};
    for (int kind = 0; kind < 2; ++kind) {
      KanModel m = kind == 0 ? KanModel::numeric({2, 2, 1}, NumericInit{NumericBasis::Spline, 6, 3, 0.1, 3}, b)
                             : KanModel::gated({2, 1, 1}, GatedInit{}, b);
      const LossWeights w{1e-2, kind == 1 ? 1e-3 : 0.0, kind == 1 ? 1e-2 : 0.0};
      diff::Tape tape;
      std::vector<double> grad;
      loss_and_gradient(m, b, w, tape, grad);
      std::vector<double> p = m.parameters();
      double worst = 0.0;
      for (std::size_t i = 0; i < p.size(); i += 7) {
        const double h = 1e-6 * std::max(1.0, std::abs(p[i]));
        std::vector<double> q = p;
        std::vector<double> g2;
        q[i] = p[i] + h;
        m.set_parameters(q);
        const double fp = loss_and_gradient(m, b, w, tape, g2);
        q[i] = p[i] - h;
        m.set_parameters(q);
        const double fm = loss_and_gradient(m, b, w, tape, g2);
        m.set_parameters(p);
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i])));
      }
      check(worst < 1e-4, kind == 0 ? "numeric model gradient vs finite differences"
                                    : "gated model gradient vs finite differences");
    }
  }
  {
    const std::vector<double> a{1, 2, 3};
    const std::vector<double> b{4, 5, 6};
    check(std::abs(stats::mwu_one_sided(a, b).p - 0.05) < 1e-15, "exact Mann-Whitney p");
    const std::vector<double> p{0.01, 0.02, 0.20};
    const auto h = stats::holm_adjust(p);
    check(std::abs(h[0] - 0.03) < 1e-15 && std::abs(h[1] - 0.04) < 1e-15 && std::abs(h[2] - 0.20) < 1e-15,
          "Holm step-down");
    check(fmt::format("{:.1f}", *stats::reduction_pct(2.12e-2, 9.49)) == "99.8" &&
              fmt::format("{:.1f}", *stats::reduction_pct(3.05e-5, 2.17e-4)) == "85.9",
          "median reduction arithmetic");
  }
  return failures == 0 ? 0 : kExitRunFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symbolic extraction from Kolmogorov-Arnold networks"};
  app.require_subcommand(1);

  RunArgs train_args;
  auto* train = app.add_subcommand("train", "Train one pipeline on one task and extract a formula");
  add_run_options(train, train_args);
  train->add_option("--seed", train_args.config.seed, "Run seed (initialisation, validation split)")->required();

  RunArgs ex_args;
  std::string checkpoint;
  auto* extract = app.add_subcommand("extract", "Symbolic extraction from a trained numeric checkpoint");
  add_run_options(extract, ex_args);
  extract->add_option("--checkpoint", checkpoint, "trained.json written by train")->required();
  extract->add_option("--seed", ex_args.config.seed, "Run seed")->capture_default_str();

  std::string plan_path;
  std::string sweep_out;
  std::string ledger;
  std::uint64_t sweep_seed = 1;
  bool no_timing = false;
  bool quiet = false;
  auto* sweep = app.add_subcommand("sweep", "Run a one-factor-at-a-time sweep plan");
  sweep->add_option("--plan", plan_path, "Plan file (JSON)")->required();
  sweep->add_option("--seed", sweep_seed, "Dataset sampling seed")->required();
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_option("--ledger", ledger, "Completed-run ledger (default <out>/ledger.csv)");
  sweep->add_flag("--no-timing", no_timing, "Write 0 for wall-clock columns");
  sweep->add_flag("--quiet", quiet, "No per-run progress lines");

  std::string results;
  std::string report_out;
  std::size_t bootstrap = 10000;
  auto* rep = app.add_subcommand("report", "Statistics, tables and violin plots from a results CSV");
  rep->add_option("--results", results, "results.csv from sweep")->required();
  rep->add_option("--out", report_out, "Output directory")->required();
  rep->add_option("--bootstrap", bootstrap, "Bootstrap resamples")->capture_default_str();

  auto* selftest = app.add_subcommand("selftest", "Quick internal consistency checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args, train);
    if (*extract) return cmd_extract(ex_args, checkpoint, extract);
    if (*sweep) return cmd_sweep(plan_path, sweep_seed, sweep_out, ledger, no_timing, quiet);
    if (*rep) return cmd_report(results, report_out, bootstrap);
    if (*selftest) return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRunFailure;
  }
  return 0;
}

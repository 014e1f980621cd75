#include "kansr/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "kansr/error.hpp"
#include "kansr/rng.hpp"

namespace kansr {

namespace {

constexpr std::array<std::string_view, kPipelineCount> kIds{"autosym", "fastkan_autosym", "gsr", "fastkan_gsr", "gmp"};
constexpr std::array<std::string_view, kPipelineCount> kDisplay{"AutoSym", "FastKAN+AutoSym", "GSR", "FastKAN+GSR",
                                                                "GMP"};

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

// Reason codes end up in a CSV cell.
std::string clean_reason(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ' ';
  return s;
}

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("plan: " + where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("plan: unknown key '" + k + "' in " + where);
}

RunConfig config_from_json(const nlohmann::json& j, const std::string& where) {
  check_keys(j, {"width", "lambda", "cycles", "seed"}, where);
  return RunConfig{j.at("width").get<std::size_t>(), j.at("lambda").get<double>(), j.at("cycles").get<std::size_t>(),
                   j.at("seed").get<std::uint64_t>()};
}

nlohmann::json config_to_json(const RunConfig& c) {
  return {{"width", c.width}, {"lambda", c.lambda}, {"cycles", c.cycles}, {"seed", c.seed}};
}

Pipeline pipeline_or_throw(const std::string& s) {
  auto p = pipeline_from_string(s);
  if (!p) throw ConfigError("unknown pipeline '" + s + "'");
  return *p;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::optional<std::vector<std::string>> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) return std::nullopt;
  out.push_back(std::move(cur));
  return out;
}

constexpr std::string_view kHeader = "dataset,pipeline,m,lambda,cycles,seed,test_mse,valid,reason,expression,wall_ms";

RunResult parse_row(const std::vector<std::string>& f, std::size_t line) {
  if (f.size() != 11) throw ConfigError(fmt::format("results line {}: expected 11 fields, got {}", line, f.size()));
  try {
    RunResult r;
    r.dataset = f[0];
    const auto p = pipeline_from_string(f[1]);
    if (!p) throw ConfigError(fmt::format("results line {}: unknown pipeline '{}'", line, f[1]));
    r.pipeline = *p;
    r.config.width = std::stoull(f[2]);
    r.config.lambda = std::stod(f[3]);
    r.config.cycles = std::stoull(f[4]);
    r.config.seed = std::stoull(f[5]);
    if (f[7] != "0" && f[7] != "1") throw ConfigError(fmt::format("results line {}: valid must be 0 or 1", line));
    r.valid = f[7] == "1";
    r.test_mse = f[6] == "NA" ? std::nan("") : std::stod(f[6]);
    if (r.valid && !std::isfinite(r.test_mse))
      throw ConfigError(fmt::format("results line {}: valid row with non-finite mse", line));
    r.reason = f[8];
    r.expression = f[9];
    r.wall_ms = std::stod(f[10]);
    return r;
  } catch (const std::logic_error&) {
    throw ConfigError(fmt::format("results line {}: malformed number", line));
  }
}

std::vector<RunResult> read_rows(std::istream& in, bool tolerate_partial_tail) {
  std::string line;
  if (!std::getline(in, line)) {
    if (tolerate_partial_tail) return {};
    throw ConfigError("results: empty file");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw ConfigError("results: header does not match the expected schema");
  std::vector<RunResult> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const bool last = in.peek() == std::char_traits<char>::eof();
    try {
      const auto f = split_csv_line(line);
      if (!f) throw ConfigError(fmt::format("results line {}: unterminated quote", n));
      rows.push_back(parse_row(*f, n));
    } catch (const ConfigError&) {
      if (tolerate_partial_tail && last) break;
      throw;
    }
  }
  return rows;
}

bool same_key(const RunResult& a, const std::string& ds, Pipeline p, const RunConfig& c) {
  return a.dataset == ds && a.pipeline == p && a.config == c;
}

GsrConfig gsr_config(const TrainingBudget& b, const RunConfig& cfg, const RunOptions& opt) {
  GsrConfig g;
  g.tau = b.tau;
  if (b.max_edges > 0) g.max_edges = b.max_edges;
  g.lr = b.lr;
  g.local.seed = cfg.seed;
  g.record_timing = opt.record_timing;
  g.run_id = opt.run_id;
  g.deadline = opt.deadline;
  return g;
}

}  // namespace

std::string_view pipeline_id(Pipeline p) { return kIds[static_cast<std::size_t>(p)]; }
std::string_view pipeline_display(Pipeline p) { return kDisplay[static_cast<std::size_t>(p)]; }

std::optional<Pipeline> pipeline_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kPipelineCount; ++i)
    if (s == kIds[i] || s == kDisplay[i]) return static_cast<Pipeline>(i);
  return std::nullopt;
}

std::vector<Pipeline> all_pipelines() {
  return {Pipeline::AutoSym, Pipeline::FastKanAutoSym, Pipeline::Gsr, Pipeline::FastKanGsr, Pipeline::Gmp};
}

std::string_view factor_name(Factor f) {
  switch (f) {
    case Factor::Width: return "width";
    case Factor::Lambda: return "lambda";
    case Factor::Cycles: return "cycles";
    case Factor::Seed: return "seed";
  }
  return "?";
}

SweepPlan plan_from_json(const nlohmann::json& j) {
  try {
    check_keys(j, {"manifest", "tasks", "factors", "reference", "pipelines", "caps", "data_seed", "budget", "timeout_s",
                   "faults", "comment"},
               "plan");
    SweepPlan p;
    p.manifest = j.at("manifest").get<std::string>();
    p.tasks = j.at("tasks").get<std::vector<std::string>>();
    if (p.tasks.empty()) throw ConfigError("plan: no tasks");
    if (j.contains("factors")) {
      const auto& f = j.at("factors");
      check_keys(f, {"width", "lambda", "cycles", "seed"}, "factors");
      if (f.contains("width")) p.widths = f.at("width").get<std::vector<std::size_t>>();
      if (f.contains("lambda")) p.lambdas = f.at("lambda").get<std::vector<double>>();
      if (f.contains("cycles")) p.cycles = f.at("cycles").get<std::vector<std::size_t>>();
      if (f.contains("seed")) p.seeds = f.at("seed").get<std::vector<std::uint64_t>>();
    }
    if (j.contains("reference")) p.reference = config_from_json(j.at("reference"), "reference");
    if (j.contains("pipelines")) {
      p.pipelines.clear();
      for (const auto& s : j.at("pipelines")) p.pipelines.push_back(pipeline_or_throw(s.get<std::string>()));
      if (p.pipelines.empty()) throw ConfigError("plan: no pipelines");
    }
    if (j.contains("caps")) {
      check_keys(j.at("caps"), {"train", "test"}, "caps");
      p.caps.train = j.at("caps").value("train", p.caps.train);
      p.caps.test = j.at("caps").value("test", p.caps.test);
    }
    p.data_seed = j.value("data_seed", p.data_seed);
    if (j.contains("budget")) {
      const auto& b = j.at("budget");
      check_keys(b, {"steps", "lr", "tau", "polish_steps", "multiplicative", "grid", "rbf_centres", "node_threshold",
                     "edge_threshold", "max_edges", "gmp"},
                 "budget");
      auto& t = p.budget;
      t.steps = b.value("steps", t.steps);
      t.lr = b.value("lr", t.lr);
      t.tau = b.value("tau", t.tau);
      t.polish_steps = b.value("polish_steps", t.polish_steps);
      t.multiplicative = b.value("multiplicative", t.multiplicative);
      t.grid = b.value("grid", t.grid);
      t.rbf_centres = b.value("rbf_centres", t.rbf_centres);
      t.node_threshold = b.value("node_threshold", t.node_threshold);
      t.edge_threshold = b.value("edge_threshold", t.edge_threshold);
      t.max_edges = b.value("max_edges", t.max_edges);
      if (b.contains("gmp")) {
        const auto& g = b.at("gmp");
        check_keys(g, {"entropy", "l1", "initial_cap", "final_k", "refine"}, "budget.gmp");
        t.gmp.entropy_weight = g.value("entropy", t.gmp.entropy_weight);
        t.gmp.l1_weight = g.value("l1", t.gmp.l1_weight);
        t.gmp.initial_cap = g.value("initial_cap", t.gmp.initial_cap);
        t.gmp.final_k = g.value("final_k", t.gmp.final_k);
        t.gmp.refine = g.value("refine", t.gmp.refine);
      }
      validate(t.gmp);
      if (t.lr <= 0.0) throw ConfigError("plan: learning rate must be positive");
      if (t.tau == 0) throw ConfigError("plan: tau must be at least 1");
    }
    p.timeout_s = j.value("timeout_s", p.timeout_s);
    if (!(p.timeout_s > 0.0)) throw ConfigError("plan: timeout_s must be positive");
    if (j.contains("faults")) {
      for (const auto& f : j.at("faults")) {
        check_keys(f, {"task", "pipeline", "config"}, "faults");
        FaultSpec fs{f.at("task").get<std::string>(), pipeline_or_throw(f.at("pipeline").get<std::string>()), {}};
        if (f.contains("config")) fs.config = config_from_json(f.at("config"), "faults.config");
        p.faults.push_back(fs);
      }
    }
    for (std::size_t w : p.widths)
      if (w == 0) throw ConfigError("plan: width must be positive");
    for (double l : p.lambdas)
      if (!(l >= 0.0)) throw ConfigError("plan: lambda must be nonnegative");
    return p;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("plan: ") + ex.what());
  }
}

nlohmann::json plan_to_json(const SweepPlan& p) {
  nlohmann::json pipes = nlohmann::json::array();
  for (Pipeline q : p.pipelines) pipes.push_back(std::string(pipeline_id(q)));
  const auto& t = p.budget;
  nlohmann::json j{
      {"manifest", p.manifest},
      {"tasks", p.tasks},
      {"factors", {{"width", p.widths}, {"lambda", p.lambdas}, {"cycles", p.cycles}, {"seed", p.seeds}}},
      {"reference", config_to_json(p.reference)},
      {"pipelines", pipes},
      {"caps", {{"train", p.caps.train}, {"test", p.caps.test}}},
      {"data_seed", p.data_seed},
      {"budget",
       {{"steps", t.steps},
        {"lr", t.lr},
        {"tau", t.tau},
        {"polish_steps", t.polish_steps},
        {"multiplicative", t.multiplicative},
        {"grid", t.grid},
        {"rbf_centres", t.rbf_centres},
        {"node_threshold", t.node_threshold},
        {"edge_threshold", t.edge_threshold},
        {"max_edges", t.max_edges},
        {"gmp",
         {{"entropy", t.gmp.entropy_weight},
          {"l1", t.gmp.l1_weight},
          {"initial_cap", t.gmp.initial_cap},
          {"final_k", t.gmp.final_k},
          {"refine", t.gmp.refine}}}}},
      {"timeout_s", p.timeout_s}};
  if (!p.faults.empty()) {
    nlohmann::json fs = nlohmann::json::array();
    for (const auto& f : p.faults) {
      nlohmann::json e{{"task", f.task}, {"pipeline", std::string(pipeline_id(f.pipeline))}};
      if (f.config) e["config"] = config_to_json(*f.config);
      fs.push_back(e);
    }
    j["faults"] = fs;
  }
  return j;
}

SweepPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read plan '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("plan '" + path + "': " + ex.what());
  }
  SweepPlan p = plan_from_json(j);
  const std::filesystem::path m(p.manifest);
  if (m.is_relative()) p.manifest = (std::filesystem::path(path).parent_path() / m).lexically_normal().string();
  return p;
}

std::vector<OfatRun> enumerate_ofat(const SweepPlan& plan) {
  const RunConfig& ref = plan.reference;
  auto require = [](bool ok, std::string_view factor) {
    if (!ok) throw ConfigError(fmt::format("plan: reference {} is not among the {} levels", factor, factor));
  };
  auto has = [](const auto& v, auto x) { return std::find(v.begin(), v.end(), x) != v.end(); };
  require(has(plan.widths, ref.width), "width");
  require(has(plan.lambdas, ref.lambda), "lambda");
  require(has(plan.cycles, ref.cycles), "cycles");
  require(has(plan.seeds, ref.seed), "seed");
  std::vector<OfatRun> runs;
  for (std::size_t w : plan.widths) {
    RunConfig c = ref;
    c.width = w;
    runs.push_back({c, Factor::Width, c == ref});
  }
  for (double l : plan.lambdas) {
    RunConfig c = ref;
    c.lambda = l;
    runs.push_back({c, Factor::Lambda, c == ref});
  }
  for (std::size_t k : plan.cycles) {
    RunConfig c = ref;
    c.cycles = k;
    runs.push_back({c, Factor::Cycles, c == ref});
  }
  for (std::uint64_t s : plan.seeds) {
    RunConfig c = ref;
    c.seed = s;
    runs.push_back({c, Factor::Seed, c == ref});
  }
  return runs;
}

std::vector<RunConfig> unique_configs(const std::vector<OfatRun>& runs) {
  std::vector<RunConfig> out;
  for (const auto& r : runs)
    if (std::find(out.begin(), out.end(), r.config) == out.end()) out.push_back(r.config);
  return out;
}

namespace {

void finish(PipelineOutput& out, const KanModel& m, const TaskSpec& task, const Dataset& data) {
  const double mse = mean_squared_error(m, data.test());
  out.final_model = m;
  out.result.test_mse = mse;
  const Composition c = compose_expression(m, task.variable_names());
  out.result.expression = c.text;
  if (!c.placeholders.empty()) out.notes.push_back(fmt::format("{} edges left numeric", c.placeholders.size()));
  if (!std::isfinite(mse)) {
    out.result.valid = false;
    out.result.reason = "non-finite-test-mse";
    return;
  }
  out.result.valid = true;
}

// Extraction and polishing on a trained numeric model.
bool extract_numeric(PipelineOutput& out, KanModel& m, const Batch& fit, const Batch& val, Pipeline pipeline,
                     const RunConfig& cfg, const TrainingBudget& budget, const RunOptions& opt) {
  if (pipeline == Pipeline::AutoSym || pipeline == Pipeline::FastKanAutoSym) {
    AutoSymConfig ac;
    ac.polish_steps = budget.polish_steps;
    ac.lr = budget.lr;
    ac.local.seed = cfg.seed;
    ac.deadline = opt.deadline;
    const AutoSymResult ar = autosym(m, fit, ac);
    if (!ar.flagged.empty()) out.notes.push_back(fmt::format("{} edges had no finite local fit", ar.flagged.size()));
    if (!ar.valid) {
      out.result.reason = ar.reason;
      return false;
    }
    return true;
  }
  const GsrResult gr = gsr(m, fit, val, gsr_config(budget, cfg, opt));
  out.trials = gr.trials;
  out.finetune_steps = gr.finetune_steps;
  out.gsr_edges = gr.committed_edges.size() + gr.flagged.size();
  if (!gr.valid) {
    out.result.reason = gr.reason;
    return false;
  }
  const StageResult pr = fit_stage(m, fit, StageOptions{budget.polish_steps, budget.lr, {}, opt.deadline, false, {}});
  if (!pr.valid) {
    out.result.reason = pr.reason;
    return false;
  }
  return true;
}

}  // namespace

PipelineOutput run_pipeline_full(const TaskSpec& task, const Dataset& data, Pipeline pipeline, const RunConfig& cfg,
                                 const TrainingBudget& budget, const RunOptions& opt) {
  const auto t0 = Clock::now();
  PipelineOutput out;
  out.result.dataset = task.name;
  out.result.pipeline = pipeline;
  out.result.config = cfg;
  out.result.test_mse = std::nan("");
  try {
    const FitSplit split = split_validation(data, cfg.seed);
    const Batch fit = split.fit();
    const Batch val = split.val();
    const ModelShape shape{data.dim, cfg.width, budget.multiplicative};
    ScheduleConfig sched;
    sched.steps = budget.steps;
    sched.lr = budget.lr;
    sched.lambda = cfg.lambda;
    sched.cycles = cfg.cycles;
    sched.node_threshold = budget.node_threshold;
    sched.edge_threshold = budget.edge_threshold;
    sched.deadline = opt.deadline;
    sched.inject_nonfinite = opt.inject_nonfinite;
    const std::uint64_t init_seed = derive_seed(cfg.seed, {0x696e6974ULL});

    if (pipeline == Pipeline::Gmp) {
      KanModel m = KanModel::gated(shape, GatedInit{0.0, false, init_seed}, fit);
      const GmpTrainResult tr = train_gmp(m, fit, sched, budget.gmp);
      out.train_report = tr.report;
      out.trained = m;
      out.gate_trace = tr.trace;
      if (!tr.report.valid) {
        out.result.reason = tr.report.reason;
      } else {
        const Discretisation disc = discretize(m);
        bool ok = true;
        if (budget.gmp.refine) {
          const GsrResult gr = refine_restricted(m, fit, val, tr.retained, disc, gsr_config(budget, cfg, opt));
          out.trials = gr.trials;
          out.finetune_steps = gr.finetune_steps;
          out.gsr_edges = gr.committed_edges.size() + gr.flagged.size();
          if (!gr.valid) {
            out.result.reason = gr.reason;
            ok = false;
          }
        }
        if (ok) {
          const StageResult pr =
              fit_stage(m, fit, StageOptions{budget.polish_steps, budget.lr, {}, opt.deadline, false, {}});
          if (pr.valid) finish(out, m, task, data);
          else out.result.reason = pr.reason;
        }
      }
    } else {
      NumericInit ni;
      const bool rbf = pipeline == Pipeline::FastKanAutoSym || pipeline == Pipeline::FastKanGsr;
      ni.basis = rbf ? NumericBasis::Rbf : NumericBasis::Spline;
      ni.grid = rbf ? budget.rbf_centres : budget.grid;
      ni.seed = init_seed;
      KanModel m = KanModel::numeric(shape, ni, fit);
      out.train_report = train_schedule(m, fit, sched);
      out.trained = m;
      if (!out.train_report.valid) {
        out.result.reason = out.train_report.reason;
      } else if (extract_numeric(out, m, fit, val, pipeline, cfg, budget, opt)) {
        finish(out, m, task, data);
      }
    }
  } catch (const std::exception& ex) {
    out.result.valid = false;
    out.result.reason = "error: " + std::string(ex.what());
  }
  if (!out.result.valid) out.result.test_mse = std::nan("");
  out.result.reason = clean_reason(out.result.reason);
  out.result.wall_ms = opt.record_timing ? ms_since(t0) : 0.0;
  return out;
}

RunResult run_pipeline(const TaskSpec& task, const Dataset& data, Pipeline pipeline, const RunConfig& cfg,
                       const TrainingBudget& budget, const RunOptions& opt) {
  return run_pipeline_full(task, data, pipeline, cfg, budget, opt).result;
}

PipelineOutput extract_from_model(const KanModel& trained, const TaskSpec& task, const Dataset& data,
                                  Pipeline pipeline, const RunConfig& cfg, const TrainingBudget& budget,
                                  const RunOptions& opt) {
  if (pipeline == Pipeline::Gmp) throw ConfigError("extract: gmp selects operators during training; use train");
  for (const auto& e : trained.edges())
    if (kind_of(e) == EdgeKind::Gated) throw ConfigError("extract: checkpoint holds a gated model");
  if (trained.shape().inputs != data.dim) throw ConfigError("extract: checkpoint input count does not match the task");
  const auto t0 = Clock::now();
  PipelineOutput out;
  out.result.dataset = task.name;
  out.result.pipeline = pipeline;
  out.result.config = cfg;
  out.result.test_mse = std::nan("");
  out.trained = trained;
  const FitSplit split = split_validation(data, cfg.seed);
  KanModel m = trained;
  if (extract_numeric(out, m, split.fit(), split.val(), pipeline, cfg, budget, opt)) finish(out, m, task, data);
  out.result.wall_ms = opt.record_timing ? ms_since(t0) : 0.0;
  return out;
}

std::vector<RunResult> run_sweep(const SweepPlan& plan, const std::vector<TaskSpec>& tasks, const SweepOptions& opt) {
  const std::vector<OfatRun> runs = enumerate_ofat(plan);
  std::vector<const TaskSpec*> specs;
  for (const auto& name : plan.tasks) specs.push_back(&find_task(tasks, name));

  struct Job {
    std::size_t task;
    Pipeline pipeline;
    RunConfig config;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> row_job;
  for (std::size_t t = 0; t < specs.size(); ++t)
    for (const auto& run : runs)
      for (Pipeline p : plan.pipelines) {
        std::size_t j = 0;
        while (j < jobs.size() && !(jobs[j].task == t && jobs[j].pipeline == p && jobs[j].config == run.config)) ++j;
        if (j == jobs.size()) jobs.push_back({t, p, run.config});
        row_job.push_back(j);
      }

  std::vector<std::optional<RunResult>> done(jobs.size());
  if (!opt.ledger_path.empty() && std::filesystem::exists(opt.ledger_path)) {
    std::ifstream in(opt.ledger_path);
    for (const auto& r : read_rows(in, true))
      for (std::size_t j = 0; j < jobs.size(); ++j)
        if (!done[j] && same_key(r, specs[jobs[j].task]->name, jobs[j].pipeline, jobs[j].config)) done[j] = r;
  }

  std::vector<Dataset> data(specs.size());
  for (std::size_t t = 0; t < specs.size(); ++t) data[t] = sample_dataset(*specs[t], plan.data_seed, plan.caps);

  std::ofstream ledger;
  if (!opt.ledger_path.empty()) {
    const bool fresh = !std::filesystem::exists(opt.ledger_path) || std::filesystem::file_size(opt.ledger_path) == 0;
    if (!fresh) {
      // drop a partially written last line before appending
      std::ifstream in(opt.ledger_path);
      const auto rows = read_rows(in, true);
      std::ofstream rewrite(opt.ledger_path, std::ios::trunc);
      write_results(rewrite, rows);
    }
    ledger.open(opt.ledger_path, std::ios::app);
    if (!ledger) throw ConfigError("cannot write ledger '" + opt.ledger_path + "'");
    if (fresh) {
      write_results_header(ledger);
      ledger.flush();
    }
  }

  std::vector<std::size_t> pending;
  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (!done[j]) pending.push_back(j);
  std::size_t completed = jobs.size() - pending.size();
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const Job& job = jobs[pending[k]];
      const TaskSpec& spec = *specs[job.task];
      RunOptions ro;
      ro.deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(plan.timeout_s));
      ro.record_timing = opt.record_timing;
      ro.run_id = fmt::format("{}/{}/m{}-l{}-c{}-s{}", spec.name, pipeline_id(job.pipeline), job.config.width,
                              job.config.lambda, job.config.cycles, job.config.seed);
      for (const auto& f : plan.faults)
        if (f.task == spec.name && f.pipeline == job.pipeline && (!f.config || *f.config == job.config))
          ro.inject_nonfinite = true;
      RunResult r = run_pipeline(spec, data[job.task], job.pipeline, job.config, plan.budget, ro);
      std::lock_guard lock(mu);
      if (ledger.is_open()) {
        write_result_row(ledger, r);
        ledger.flush();
      }
      done[pending[k]] = r;
      ++completed;
      if (opt.on_result) opt.on_result(r, completed, jobs.size());
    }
  };
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(opt.threads, pending.size()));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<RunResult> rows;
  rows.reserve(row_job.size());
  for (std::size_t j : row_job) rows.push_back(*done[j]);
  return rows;
}

void write_results_header(std::ostream& out) { out << kHeader << '\n'; }

void write_result_row(std::ostream& out, const RunResult& r) {
  const std::string mse = r.valid && std::isfinite(r.test_mse) ? fmt::format("{:.17g}", r.test_mse) : "NA";
  out << fmt::format("{},{},{},{},{},{},{},{},{},{},{:.0f}\n", csv_field(r.dataset), pipeline_id(r.pipeline),
                     r.config.width, r.config.lambda, r.config.cycles, r.config.seed, mse, r.valid ? 1 : 0,
                     csv_field(r.reason), csv_field(r.expression), r.wall_ms);
}

void write_results(std::ostream& out, const std::vector<RunResult>& rows) {
  write_results_header(out);
  for (const auto& r : rows) write_result_row(out, r);
}

std::vector<RunResult> read_results(std::istream& in) { return read_rows(in, false); }

std::vector<RunResult> read_results_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read results '" + path + "'");
  return read_results(in);
}

namespace {

struct GroupKey {
  std::size_t dataset;
  Pipeline pipeline;
};

// Rows grouped by (dataset, pipeline): datasets in first-appearance order,
// pipelines in enum order.
std::vector<std::pair<GroupKey, std::vector<const RunResult*>>> group_rows(const std::vector<RunResult>& rows,
                                                                           std::vector<std::string>& datasets) {
  datasets.clear();
  for (const auto& r : rows)
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  std::vector<std::pair<GroupKey, std::vector<const RunResult*>>> out;
  for (std::size_t d = 0; d < datasets.size(); ++d)
    for (Pipeline p : all_pipelines()) {
      std::vector<const RunResult*> g;
      for (const auto& r : rows)
        if (r.dataset == datasets[d] && r.pipeline == p) g.push_back(&r);
      if (!g.empty()) out.push_back({{d, p}, std::move(g)});
    }
  return out;
}

std::uint64_t reference_seed(const std::vector<const RunResult*>& g) {
  std::map<std::uint64_t, std::size_t> count;
  for (const auto* r : g) ++count[r->config.seed];
  std::uint64_t best = count.begin()->first;
  for (const auto& [s, c] : count)
    if (c > count[best]) best = s;
  return best;
}

}  // namespace

std::vector<OfatDistribution> build_distributions(const std::vector<RunResult>& rows, bool exclude_seed_factor) {
  std::vector<std::string> datasets;
  std::vector<OfatDistribution> out;
  for (const auto& [key, g] : group_rows(rows, datasets)) {
    OfatDistribution d{datasets[key.dataset], key.pipeline, {}, 0};
    const std::uint64_t ref_seed = reference_seed(g);
    std::vector<RunConfig> seen;
    for (const auto* r : g) {
      if (exclude_seed_factor && r->config.seed != ref_seed) continue;
      if (std::find(seen.begin(), seen.end(), r->config) != seen.end()) continue;
      seen.push_back(r->config);
      if (r->valid && std::isfinite(r->test_mse)) d.samples.push_back(r->test_mse);
      else ++d.n_invalid;
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<SeedSummary> seed_sensitivity(const std::vector<RunResult>& rows) {
  std::vector<std::string> datasets;
  std::vector<SeedSummary> out;
  for (const auto& [key, g] : group_rows(rows, datasets)) {
    // reference hyper-parameters: most frequent (m, lambda, cycles), first wins ties
    std::vector<std::pair<RunConfig, std::size_t>> counts;
    for (const auto* r : g) {
      RunConfig c = r->config;
      c.seed = 0;
      auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& e) { return e.first == c; });
      if (it == counts.end()) counts.push_back({c, 1});
      else ++it->second;
    }
    RunConfig ref = counts.front().first;
    std::size_t best = counts.front().second;
    for (const auto& [c, n] : counts)
      if (n > best) {
        ref = c;
        best = n;
      }
    SeedSummary s{datasets[key.dataset], key.pipeline, 0, 0, 0.0, 0.0};
    std::set<std::uint64_t> seeds;
    std::vector<double> vals;
    for (const auto* r : g) {
      RunConfig c = r->config;
      c.seed = 0;
      if (!(c == ref) || !seeds.insert(r->config.seed).second) continue;
      if (r->valid && std::isfinite(r->test_mse)) vals.push_back(r->test_mse);
    }
    s.n_seeds = seeds.size();
    s.n_valid = vals.size();
    if (!vals.empty()) {
      double sum = 0.0;
      for (double v : vals) sum += v;
      s.mean = sum / static_cast<double>(vals.size());
      if (vals.size() > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(vals.size() - 1));
      }
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace kansr

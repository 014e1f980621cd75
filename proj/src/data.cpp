#include "kansr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "kansr/error.hpp"
#include "kansr/rng.hpp"

namespace kansr {

namespace {

std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Line on which each element of the top-level array starts.
std::vector<std::size_t> element_lines(std::string_view text) {
  std::vector<std::size_t> lines;
  std::size_t line = 1;
  int depth = 0;
  bool in_string = false;
  bool escape = false;
  for (char c : text) {
    if (c == '\n') ++line;
    if (in_string) {
      if (escape) escape = false;
      else if (c == '\\') escape = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[' || c == '{') {
      if (depth == 1) lines.push_back(line);
      ++depth;
    } else if (c == ']' || c == '}') {
      --depth;
    }
  }
  return lines;
}

}  // namespace

std::vector<std::string> TaskSpec::variable_names() const {
  std::vector<std::string> out;
  for (const auto& v : vars) out.push_back(v.name);
  return out;
}

Range TaskSpec::input_range() const {
  Range r{vars.front().lo, vars.front().hi};
  for (const auto& v : vars) {
    r.lo = std::min(r.lo, v.lo);
    r.hi = std::max(r.hi, v.hi);
  }
  return r;
}

std::vector<TaskSpec> parse_manifest(std::string_view text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    const auto [line, col] = line_col(text, ex.byte > 0 ? ex.byte - 1 : 0);
    throw ConfigError(fmt::format("{}:{}:{}: malformed JSON ({})", origin, line, col, ex.what()));
  } catch (const nlohmann::json::out_of_range& ex) {
    // overflowing literals such as 1e999
    throw ConfigError(fmt::format("{}: non-finite number ({})", origin, ex.what()));
  }
  if (!j.is_array()) throw ConfigError(origin + ":1: manifest must be a JSON array of tasks");
  const std::vector<std::size_t> lines = element_lines(text);
  std::vector<TaskSpec> tasks;
  std::set<std::string> seen;
  for (std::size_t idx = 0; idx < j.size(); ++idx) {
    const std::size_t line = idx < lines.size() ? lines[idx] : 0;
    auto fail = [&](const std::string& msg) {
      return ConfigError(fmt::format("{}:{}: task {}: {}", origin, line, idx + 1, msg));
    };
    const auto& e = j[idx];
    if (!e.is_object()) throw fail("entry must be an object");
    TaskSpec t;
    t.line = line;
    try {
      t.name = e.at("name").get<std::string>();
      t.formula = e.at("formula").get<std::string>();
      t.source = e.value("source", std::string());
      if (e.contains("noise") && e.at("noise").get<double>() != 0.0) throw fail("label noise is not supported");
      for (const auto& v : e.at("vars")) {
        VarSpec vs{v.at("name").get<std::string>(), v.at("lo").get<double>(), v.at("hi").get<double>()};
        t.vars.push_back(vs);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw fail(std::string("bad field (") + ex.what() + ")");
    }
    if (t.name.empty()) throw fail("empty task name");
    if (!seen.insert(t.name).second) throw fail("duplicate task name '" + t.name + "'");
    if (t.vars.empty()) throw fail("no variables");
    std::set<std::string> vnames;
    for (const auto& v : t.vars) {
      if (!vnames.insert(v.name).second) throw fail("duplicate variable '" + v.name + "'");
      if (!std::isfinite(v.lo) || !std::isfinite(v.hi)) throw fail("non-finite range for '" + v.name + "'");
      if (v.lo > v.hi) throw fail(fmt::format("range of '{}' has lo > hi ({} > {})", v.name, v.lo, v.hi));
    }
    try {
      t.tree = expr::parse(t.formula, expr::ParseOptions{t.variable_names()});
    } catch (const ParseError& ex) {
      throw fail(std::string("formula: ") + ex.what());
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

std::vector<TaskSpec> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path);
}

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, std::string_view name) {
  for (const auto& t : tasks)
    if (t.name == name) return t;
  std::string avail;
  for (const auto& t : tasks) avail += (avail.empty() ? "" : ", ") + t.name;
  throw ConfigError(fmt::format("unknown task '{}'; available: {}", name, avail));
}

Dataset sample_dataset(const TaskSpec& task, std::uint64_t seed, const Caps& caps) {
  constexpr int kRetries = 100;
  const std::size_t d = task.vars.size();
  const std::size_t n = caps.train + caps.test;
  Rng rng(derive_seed(seed, {0x64617461ULL}));
  std::vector<double> x(n * d);
  std::vector<double> y(n);
  std::vector<std::uniform_real_distribution<double>> dist;
  for (const auto& v : task.vars) dist.emplace_back(v.lo, v.hi);
  for (std::size_t i = 0; i < n; ++i) {
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt == kRetries)
        throw ConfigError(fmt::format("task {}: formula is non-finite on {} consecutive draws", task.name, kRetries));
      for (std::size_t k = 0; k < d; ++k) x[i * d + k] = dist[k](rng);
      y[i] = expr::evaluate(task.tree, std::span(x).subspan(i * d, d));
      if (std::isfinite(y[i])) break;
    }
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset ds;
  ds.dim = d;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = perm[r];
    auto& xs = r < caps.train ? ds.train_x : ds.test_x;
    auto& ys = r < caps.train ? ds.train_y : ds.test_y;
    xs.insert(xs.end(), x.begin() + static_cast<std::ptrdiff_t>(i * d), x.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    ys.push_back(y[i]);
  }
  return ds;
}

FitSplit split_validation(const Dataset& ds, std::uint64_t seed, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("validation fraction must be in [0, 1)");
  const std::size_t n = ds.train_y.size();
  const std::size_t d = ds.dim;
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, {0x76616cULL}));
  std::shuffle(perm.begin(), perm.end(), rng);
  // keep the original row order inside each part
  std::vector<std::uint8_t> is_val(n, 0);
  for (std::size_t r = 0; r < n_val; ++r) is_val[perm[r]] = 1;
  FitSplit s;
  s.dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    auto& xs = is_val[i] ? s.val_x : s.fit_x;
    auto& ys = is_val[i] ? s.val_y : s.fit_y;
    xs.insert(xs.end(), ds.train_x.begin() + static_cast<std::ptrdiff_t>(i * d),
              ds.train_x.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    ys.push_back(ds.train_y[i]);
  }
  return s;
}

void write_csv(std::ostream& out, std::span<const double> x, std::span<const double> y, std::size_t dim) {
  for (std::size_t k = 0; k < dim; ++k) out << 'x' << (k + 1) << ',';
  out << "y\n";
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t k = 0; k < dim; ++k) out << fmt::format("{:.17g},", x[i * dim + k]);
    out << fmt::format("{:.17g}\n", y[i]);
  }
}

}  // namespace kansr

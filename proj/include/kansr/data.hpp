#pragma once

// Task manifests (formulas over named variables with sampling ranges), seeded
// dataset generation and train/test/validation splits.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "kansr/expr.hpp"
#include "kansr/network.hpp"

namespace kansr {

struct VarSpec {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
};

struct TaskSpec {
  std::string name;
  std::string formula;
  std::vector<VarSpec> vars;
  std::string source;
  std::size_t line = 0;  // manifest line where the entry starts
  expr::Tree tree;

  [[nodiscard]] std::vector<std::string> variable_names() const;
  [[nodiscard]] Range input_range() const;
};

/// Parses a manifest: a JSON array of {name, formula, vars: [{name, lo, hi}]}
/// with optional "source" and "noise" (must be 0). Errors carry the line of
/// the offending entry.
std::vector<TaskSpec> parse_manifest(std::string_view text, const std::string& origin = "<manifest>");
std::vector<TaskSpec> load_manifest(const std::string& path);

/// Throws ConfigError listing the available task names.
const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, std::string_view name);

struct Caps {
  std::size_t train = 2000;
  std::size_t test = 1000;
};

struct Dataset {
  std::size_t dim = 0;
  std::vector<double> train_x, train_y, test_x, test_y;

  [[nodiscard]] Batch train() const { return {train_x, train_y, dim}; }
  [[nodiscard]] Batch test() const { return {test_x, test_y, dim}; }
};

/// Uniform independent sampling per variable, then a seeded permutation of
/// the rows into train and test. Rows with a non-finite target are redrawn a
/// bounded number of times.
Dataset sample_dataset(const TaskSpec& task, std::uint64_t seed, const Caps& caps = {});

/// Training split divided into the rows used for gradient steps and a held-out
/// validation part.
struct FitSplit {
  std::size_t dim = 0;
  std::vector<double> fit_x, fit_y, val_x, val_y;

  [[nodiscard]] Batch fit() const { return {fit_x, fit_y, dim}; }
  [[nodiscard]] Batch val() const { return {val_x, val_y, dim}; }
};

FitSplit split_validation(const Dataset& d, std::uint64_t seed, double fraction = 0.2);

/// CSV with header x1..xd,y.
void write_csv(std::ostream& out, std::span<const double> x, std::span<const double> y, std::size_t dim);

}  // namespace kansr

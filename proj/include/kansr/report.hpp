#pragma once

// Statistical summary of a results table: best pipeline per dataset,
// best-vs-other comparisons, median reductions against AutoSym, seed
// sensitivity, and the files written by `kansr report`.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kansr/sweep.hpp"

namespace kansr::report {

/// Mantissa/exponent notation with 3 significant digits: 0.0212 -> "2.12e-2".
std::string sci(double v);

struct Comparison {
  std::string dataset;
  Pipeline best;
  Pipeline other;
  double med_best = 0.0;
  double med_other = 0.0;
  double u = 0.0;
  double p_raw = 1.0;
  double p_holm = 1.0;
  bool exact = false;
  double delta = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct DatasetSummary {
  std::string dataset;
  std::vector<OfatDistribution> methods;  // pipeline order
  std::optional<Pipeline> best;           // empty when no method has a valid run
  std::optional<double> med_best;
  std::optional<double> med_autosym;
  std::optional<double> reduction;  // vs AutoSym
  std::vector<Comparison> comparisons;
  /// Methods with no valid OFAT run; they get no comparison row.
  std::vector<Pipeline> missing;
};

struct StatsReport {
  std::vector<DatasetSummary> datasets;
  std::vector<SeedSummary> seeds;
  std::size_t exact_tests = 0;
  std::size_t approx_tests = 0;
};

struct AnalysisOptions {
  std::size_t bootstrap = 10000;
  double level = 0.95;
  std::uint64_t seed = 1;
};

StatsReport analyse(const std::vector<RunResult>& rows, const AnalysisOptions& opt = {});

/// dataset,comparison,med_best,med_other,p_raw,p_holm,cliffs_delta,ci_lo,ci_hi,stars
void write_stats_csv(std::ostream& out, const StatsReport& r);
void write_tables_md(std::ostream& out, const StatsReport& r);
/// Log10-scale violins for one dataset; methods without a valid run are drawn
/// as a red cross.
std::string violin_svg(const DatasetSummary& d);
/// File-name-safe form of a dataset name.
std::string file_stem(const std::string& dataset);

/// Writes stats.csv, tables.md and violin_<dataset>.svg into `dir`.
void write_report(const std::vector<RunResult>& rows, const std::string& dir, const AnalysisOptions& opt = {});

}  // namespace kansr::report

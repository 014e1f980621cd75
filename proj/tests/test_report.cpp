#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kansr/report.hpp"

using namespace kansr;
using namespace kansr::report;
namespace fs = std::filesystem;

namespace {

// One OFAT group per pipeline: widths 1..n at seed 1 plus two extra seeds.
void add_group(std::vector<RunResult>& rows, const std::string& ds, Pipeline p, const std::vector<double>& mse,
               bool valid = true) {
  for (std::size_t i = 0; i < mse.size(); ++i)
    rows.push_back({ds, p, {i + 1, 0.01, 3, 1}, valid ? mse[i] : std::nan(""), valid, valid ? "" : "non-finite-loss",
                    "x1", 0.0});
  for (std::uint64_t s : {2, 3})
    rows.push_back({ds, p, {1, 0.01, 3, s}, valid ? mse[0] * static_cast<double>(s) : std::nan(""), valid,
                    valid ? "" : "timeout", "x1", 0.0});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Sci, MantissaExponent) {
  EXPECT_EQ(sci(0.0212), "2.12e-2");
  EXPECT_EQ(sci(9.49), "9.49e0");
  EXPECT_EQ(sci(3.05e-5), "3.05e-5");
  EXPECT_EQ(sci(123456.0), "1.23e5");
  EXPECT_EQ(sci(NAN), "N/A");
}

TEST(Analyse, DominatingMethodIsBestWithSignificantRows) {
  std::vector<RunResult> rows;
  add_group(rows, "d", Pipeline::AutoSym, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0});
  add_group(rows, "d", Pipeline::Gsr, {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07});
  add_group(rows, "d", Pipeline::FastKanGsr, {0.5, 0.6, 0.7, 0.8, 0.9, 1.1, 1.2});
  const StatsReport r = analyse(rows, AnalysisOptions{500, 0.95, 1});
  ASSERT_EQ(r.datasets.size(), 1u);
  const DatasetSummary& d = r.datasets[0];
  ASSERT_TRUE(d.best.has_value());
  EXPECT_EQ(*d.best, Pipeline::Gsr);
  EXPECT_DOUBLE_EQ(*d.med_best, 0.04);
  EXPECT_DOUBLE_EQ(*d.med_autosym, 4.0);
  EXPECT_NEAR(*d.reduction, 99.0, 1e-12);
  ASSERT_EQ(d.comparisons.size(), 2u);
  for (const auto& c : d.comparisons) {
    EXPECT_EQ(c.best, Pipeline::Gsr);
    EXPECT_EQ(c.u, 0.0);
    EXPECT_EQ(c.delta, -1.0);
    EXPECT_LT(c.p_holm, 0.05);
    EXPECT_GE(c.p_holm, c.p_raw);
    EXPECT_GT(c.ci_lo, 0.0);
    EXPECT_FALSE(c.exact);  // 7 + 7 exceeds the enumeration limit
  }
  EXPECT_EQ(r.approx_tests, 2u);
  std::ostringstream csv;
  write_stats_csv(csv, r);
  EXPECT_NE(csv.str().find("d,GSR -> AutoSym,0.04,4,"), std::string::npos) << csv.str();
}

TEST(Analyse, MethodWithoutValidRunsIsMarkedMissing) {
  std::vector<RunResult> rows;
  add_group(rows, "I.6.2", Pipeline::AutoSym, {1.0, 2.0, 3.0});
  add_group(rows, "I.6.2", Pipeline::Gsr, {0.1, 0.2, 0.3});
  add_group(rows, "I.6.2", Pipeline::Gmp, {1.0, 1.0, 1.0}, false);
  const StatsReport r = analyse(rows, AnalysisOptions{200, 0.95, 1});
  const DatasetSummary& d = r.datasets[0];
  EXPECT_EQ(d.missing, std::vector<Pipeline>{Pipeline::Gmp});
  ASSERT_EQ(d.comparisons.size(), 1u);
  EXPECT_EQ(d.comparisons[0].other, Pipeline::AutoSym);
  EXPECT_TRUE(d.comparisons[0].exact);
  EXPECT_DOUBLE_EQ(d.comparisons[0].p_raw, 1.0 / 20.0);

  const std::string svg = violin_svg(d);
  EXPECT_NE(svg.find("class=\"missing\""), std::string::npos);
  EXPECT_NE(svg.find("no valid runs"), std::string::npos);
  EXPECT_EQ(svg.find("NaN"), std::string::npos);
  std::size_t paths = 0;
  for (std::size_t at = svg.find("fill=\"#9ecae1\""); at != std::string::npos; at = svg.find("fill=\"#9ecae1\"", at + 1))
    ++paths;
  EXPECT_EQ(paths, 2u);

  std::ostringstream md;
  write_tables_md(md, r);
  EXPECT_NE(md.str().find("N/A (0/3)"), std::string::npos) << md.str();
  EXPECT_NE(md.str().find("**2.00e-1** (3/3)"), std::string::npos);
  EXPECT_NE(md.str().find("| I.6.2 | GSR | 2.00e-1 | 2.00e0 | 90.0 |"), std::string::npos);
  EXPECT_NE(md.str().find("1 dataset/pipeline pairs had no valid OFAT run"), std::string::npos);
}

TEST(Analyse, SeedSensitivityColumn) {
  std::vector<RunResult> rows;
  add_group(rows, "d", Pipeline::AutoSym, {1.0, 2.0, 3.0});
  add_group(rows, "d", Pipeline::Gsr, {0.1, 0.2, 0.3});
  const StatsReport r = analyse(rows, AnalysisOptions{100, 0.95, 1});
  std::ostringstream md;
  write_tables_md(md, r);
  // reference (m=1): seeds give 1, 2, 3
  EXPECT_NE(md.str().find("2.00e0 ± 1.00e0"), std::string::npos) << md.str();
}

TEST(Report, FilesAreDeterministic) {
  std::vector<RunResult> rows;
  add_group(rows, "a/b", Pipeline::AutoSym, {1.0, 2.0, 3.0, 4.0});
  add_group(rows, "a/b", Pipeline::Gsr, {0.5, 0.25, 0.125, 3.0});
  const fs::path d1 = fs::temp_directory_path() / "kansr_report_1";
  const fs::path d2 = fs::temp_directory_path() / "kansr_report_2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  write_report(rows, d1.string(), AnalysisOptions{300, 0.95, 9});
  write_report(rows, d2.string(), AnalysisOptions{300, 0.95, 9});
  for (const char* f : {"stats.csv", "tables.md", "violin_a_b.svg"}) {
    ASSERT_TRUE(fs::exists(d1 / f)) << f;
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

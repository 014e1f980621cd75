#include "kansr/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "kansr/error.hpp"
#include "kansr/rng.hpp"
#include "kansr/stats.hpp"

namespace kansr::report {

std::string sci(double v) {
  if (!std::isfinite(v)) return "N/A";
  std::string s = fmt::format("{:.2e}", v);  // 2.12e-02
  const auto e = s.find('e');
  const int exp = std::stoi(s.substr(e + 1));
  return s.substr(0, e) + "e" + std::to_string(exp);
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::string comparison_label(const Comparison& c) {
  return fmt::format("{} -> {}", pipeline_display(c.best), pipeline_display(c.other));
}

}  // namespace

StatsReport analyse(const std::vector<RunResult>& rows, const AnalysisOptions& opt) {
  StatsReport rep;
  const std::vector<OfatDistribution> dists = build_distributions(rows, true);
  std::vector<std::string> order;
  for (const auto& d : dists)
    if (std::find(order.begin(), order.end(), d.dataset) == order.end()) order.push_back(d.dataset);

  for (std::size_t di = 0; di < order.size(); ++di) {
    DatasetSummary s;
    s.dataset = order[di];
    for (const auto& d : dists)
      if (d.dataset == s.dataset) s.methods.push_back(d);
    double best_med = 0.0;
    const OfatDistribution* best = nullptr;
    for (const auto& m : s.methods) {
      if (m.samples.empty()) {
        s.missing.push_back(m.pipeline);
        continue;
      }
      const double med = stats::median(m.samples);
      if (m.pipeline == Pipeline::AutoSym) s.med_autosym = med;
      if (!best || med < best_med) {
        best = &m;
        best_med = med;
      }
    }
    if (best) {
      s.best = best->pipeline;
      s.med_best = best_med;
      if (s.med_autosym) s.reduction = stats::reduction_pct(best_med, *s.med_autosym);
      std::vector<double> raw;
      for (const auto& m : s.methods) {
        if (&m == best || m.samples.empty()) continue;
        Comparison c;
        c.dataset = s.dataset;
        c.best = best->pipeline;
        c.other = m.pipeline;
        c.med_best = best_med;
        c.med_other = stats::median(m.samples);
        const stats::MwuResult t = stats::mwu_one_sided(best->samples, m.samples);
        c.u = t.u;
        c.p_raw = t.p;
        c.exact = t.exact;
        (t.exact ? rep.exact_tests : rep.approx_tests) += 1;
        c.delta = stats::cliffs_delta(best->samples, m.samples);
        const stats::Interval ci = stats::bootstrap_median_diff_ci(
            best->samples, m.samples, opt.bootstrap, opt.level,
            derive_seed(opt.seed, {di, static_cast<std::uint64_t>(m.pipeline)}));
        c.ci_lo = ci.lo;
        c.ci_hi = ci.hi;
        raw.push_back(t.p);
        s.comparisons.push_back(c);
      }
      const std::vector<double> adj = stats::holm_adjust(raw);
      for (std::size_t i = 0; i < adj.size(); ++i) s.comparisons[i].p_holm = adj[i];
    }
    rep.datasets.push_back(std::move(s));
  }
  rep.seeds = seed_sensitivity(rows);
  return rep;
}

void write_stats_csv(std::ostream& out, const StatsReport& r) {
  out << "dataset,comparison,med_best,med_other,p_raw,p_holm,cliffs_delta,ci_lo,ci_hi,stars\n";
  for (const auto& d : r.datasets)
    for (const auto& c : d.comparisons) {
      const std::string ds = d.dataset.find_first_of(",\"") == std::string::npos ? d.dataset : "\"" + d.dataset + "\"";
      out << fmt::format("{},{},{:.6g},{:.6g},{:.6g},{:.6g},{:.4f},{:.6g},{:.6g},{}\n", ds, comparison_label(c),
                         c.med_best, c.med_other, c.p_raw, c.p_holm, c.delta, c.ci_lo, c.ci_hi, stats::stars(c.p_holm));
    }
}

void write_tables_md(std::ostream& out, const StatsReport& r) {
  std::vector<Pipeline> cols;
  for (Pipeline p : all_pipelines())
    for (const auto& d : r.datasets)
      if (std::any_of(d.methods.begin(), d.methods.end(), [&](const auto& m) { return m.pipeline == p; }) &&
          std::find(cols.begin(), cols.end(), p) == cols.end())
        cols.push_back(p);

  out << "# OFAT summary\n\n";
  out << "## Median OFAT test MSE by pipeline\n\n";
  out << "Valid runs out of distinct configurations in brackets.\n\n| Dataset |";
  for (Pipeline p : cols) out << ' ' << pipeline_display(p) << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& d : r.datasets) {
    out << "| " << d.dataset << " |";
    for (Pipeline p : cols) {
      auto it = std::find_if(d.methods.begin(), d.methods.end(), [&](const auto& m) { return m.pipeline == p; });
      if (it == d.methods.end()) {
        out << " |";
        continue;
      }
      const std::size_t n = it->samples.size() + it->n_invalid;
      const std::string med = it->samples.empty() ? "N/A" : sci(stats::median(it->samples));
      const bool bold = d.best && *d.best == p;
      out << fmt::format(" {}{}{} ({}/{}) |", bold ? "**" : "", med, bold ? "**" : "", it->samples.size(), n);
    }
    out << '\n';
  }

  out << "\n## Best pipeline vs AutoSym\n\n";
  out << "| Dataset | Best | med(best) | med(AutoSym) | Reduction (%) |\n|---|---|---|---|---|\n";
  for (const auto& d : r.datasets) {
    out << fmt::format("| {} | {} | {} | {} | {} |\n", d.dataset, d.best ? pipeline_display(*d.best) : "N/A",
                       d.med_best ? sci(*d.med_best) : "N/A", d.med_autosym ? sci(*d.med_autosym) : "N/A",
                       d.reduction ? fmt::format("{:.1f}", *d.reduction) : "N/A");
  }

  out << "\n## One-sided Mann-Whitney U: best vs other\n\n";
  out << "p-values Holm-corrected per dataset. Cliff's delta is negative when the best pipeline tends lower. "
         "CI: bootstrap 95% interval of med(other) - med(best).\n\n";
  out << "| Dataset | Comparison | med(best) | med(other) | p_Holm | Cliff's delta | CI |\n"
         "|---|---|---|---|---|---|---|\n";
  for (const auto& d : r.datasets)
    for (const auto& c : d.comparisons)
      out << fmt::format("| {} | {} | {} | {} | {}{} | {:.2f} | [{}, {}] |\n", d.dataset, comparison_label(c),
                         sci(c.med_best), sci(c.med_other), sci(c.p_holm), stats::stars(c.p_holm), c.delta,
                         sci(c.ci_lo), sci(c.ci_hi));

  out << "\n## Seed sensitivity at the reference configuration\n\n";
  out << "Test MSE mean ± std over seeds. † marks fewer than three valid seeds.\n\n| Dataset |";
  for (Pipeline p : cols) out << ' ' << pipeline_display(p) << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& d : r.datasets) {
    out << "| " << d.dataset << " |";
    for (Pipeline p : cols) {
      auto it = std::find_if(r.seeds.begin(), r.seeds.end(),
                             [&](const SeedSummary& s) { return s.dataset == d.dataset && s.pipeline == p; });
      if (it == r.seeds.end() || it->n_valid == 0) {
        out << " N/A |";
      } else if (it->n_valid == 1) {
        out << fmt::format(" {}† |", sci(it->mean));
      } else {
        out << fmt::format(" {} ± {}{} |", sci(it->mean), sci(it->std), it->n_valid < 3 ? "†" : "");
      }
    }
    out << '\n';
  }

  std::size_t missing = 0;
  for (const auto& d : r.datasets) missing += d.missing.size();
  out << fmt::format(
      "\n---\n\nMann-Whitney p-values: {} exact by enumeration of all rank splits (combined size <= {}), {} from the "
      "normal approximation with tie and continuity correction. {} dataset/pipeline pairs had no valid OFAT run "
      "and have no comparison row. Inputs are sampled uniformly on the manifest ranges.\n",
      r.exact_tests, stats::kExactMwuLimit, r.approx_tests, missing);
}

std::string file_stem(const std::string& dataset) {
  std::string s = dataset;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')) c = '_';
  return s;
}

std::string violin_svg(const DatasetSummary& d) {
  constexpr double kCol = 130.0;
  constexpr double kLeft = 70.0;
  constexpr double kTop = 40.0;
  constexpr double kPlotH = 300.0;
  constexpr double kHalf = 50.0;
  const double width = kLeft + kCol * static_cast<double>(d.methods.size()) + 20.0;
  const double height = kTop + kPlotH + 60.0;

  double lo = 0.0;
  double hi = 0.0;
  bool any = false;
  for (const auto& m : d.methods)
    for (double v : m.samples) {
      const double l = std::log10(std::max(v, 1e-300));
      lo = any ? std::min(lo, l) : l;
      hi = any ? std::max(hi, l) : l;
      any = true;
    }
  if (!any) {
    lo = -1.0;
    hi = 1.0;
  }
  lo = std::floor(lo - 0.25);
  hi = std::ceil(hi + 0.25);
  if (hi - lo < 1.0) hi = lo + 1.0;
  auto ypos = [&](double l) { return kTop + kPlotH * (hi - l) / (hi - lo); };

  std::string s;
  s += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n",
      width, height);
  s += fmt::format("<text x=\"{:.1f}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", width / 2.0,
                   xml_escape(d.dataset));
  s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", kLeft,
                   kTop, kTop + kPlotH);
  for (int e = static_cast<int>(lo); e <= static_cast<int>(hi); ++e) {
    const double y = ypos(e);
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n", kLeft, y,
                     width - 20.0, y);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">1e{}</text>\n", kLeft - 6.0, y + 4.0, e);
  }
  s += fmt::format(
      "<text x=\"16\" y=\"{:.1f}\" transform=\"rotate(-90 16 {:.1f})\" text-anchor=\"middle\">test MSE</text>\n",
      kTop + kPlotH / 2.0, kTop + kPlotH / 2.0);

  for (std::size_t i = 0; i < d.methods.size(); ++i) {
    const auto& m = d.methods[i];
    const double cx = kLeft + kCol * (static_cast<double>(i) + 0.5);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", cx, kTop + kPlotH + 20.0,
                     xml_escape(std::string(pipeline_display(m.pipeline))));
    if (m.samples.empty()) {
      const double cy = kTop + kPlotH / 2.0;
      s += fmt::format(
          "<path d=\"M{:.1f} {:.1f} L{:.1f} {:.1f} M{:.1f} {:.1f} L{:.1f} {:.1f}\" stroke=\"red\" stroke-width=\"3\" "
          "class=\"missing\"/>\n",
          cx - 10.0, cy - 10.0, cx + 10.0, cy + 10.0, cx - 10.0, cy + 10.0, cx + 10.0, cy - 10.0);
      s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\" fill=\"red\">no valid runs</text>\n", cx,
                       cy + 28.0);
      continue;
    }
    std::vector<double> l;
    for (double v : m.samples) l.push_back(std::log10(std::max(v, 1e-300)));
    std::sort(l.begin(), l.end());
    const double n = static_cast<double>(l.size());
    double mean = 0.0;
    for (double v : l) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : l) var += (v - mean) * (v - mean);
    const double sd = l.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    // Silverman's rule, with a floor for degenerate samples
    const double bw = std::max(1.06 * sd * std::pow(n, -0.2), 0.05);
    const double a = std::max(lo, l.front() - 3.0 * bw);
    const double b = std::min(hi, l.back() + 3.0 * bw);
    constexpr int kPts = 64;
    std::vector<double> grid(kPts);
    std::vector<double> dens(kPts);
    double peak = 0.0;
    for (int k = 0; k < kPts; ++k) {
      grid[k] = a + (b - a) * k / (kPts - 1);
      double acc = 0.0;
      for (double v : l) acc += std::exp(-0.5 * std::pow((grid[k] - v) / bw, 2));
      dens[k] = acc / (n * bw * std::sqrt(2.0 * std::numbers::pi));
      peak = std::max(peak, dens[k]);
    }
    std::string path;
    for (int k = 0; k < kPts; ++k)
      path += fmt::format("{}{:.2f} {:.2f} ", k == 0 ? "M" : "L", cx + kHalf * dens[k] / peak, ypos(grid[k]));
    for (int k = kPts - 1; k >= 0; --k)
      path += fmt::format("L{:.2f} {:.2f} ", cx - kHalf * dens[k] / peak, ypos(grid[k]));
    path += "Z";
    s += fmt::format("<path d=\"{}\" fill=\"#9ecae1\" stroke=\"#3182bd\" fill-opacity=\"0.7\"/>\n", path);
    for (std::size_t k = 0; k < l.size(); ++k) {
      const double dx = (static_cast<double>(k % 5) - 2.0) * 4.0;
      s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"black\"/>\n", cx + dx, ypos(l[k]));
    }
    const double med = std::log10(std::max(stats::median(m.samples), 1e-300));
    s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"white\" "
                     "stroke-width=\"2\"/>\n",
                     cx - 15.0, ypos(med), cx + 15.0, ypos(med));
  }
  s += "</svg>\n";
  return s;
}

void write_report(const std::vector<RunResult>& rows, const std::string& dir, const AnalysisOptions& opt) {
  const StatsReport r = analyse(rows, opt);
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(base / name, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + (base / name).string() + "'");
    return f;
  };
  {
    auto f = open("stats.csv");
    write_stats_csv(f, r);
  }
  {
    auto f = open("tables.md");
    write_tables_md(f, r);
  }
  for (const auto& d : r.datasets) {
    auto f = open("violin_" + file_stem(d.dataset) + ".svg");
    f << violin_svg(d);
  }
}

}  // namespace kansr::report

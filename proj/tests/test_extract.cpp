#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "kansr/basis.hpp"
#include "kansr/extract.hpp"

using namespace kansr;

namespace {

struct Split {
  std::vector<double> fx, fy, vx, vy;
  [[nodiscard]] Batch fit() const { return {fx, fy, 2}; }
  [[nodiscard]] Batch val() const { return {vx, vy, 2}; }
};

Split make_split(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Split s;
  for (int i = 0; i < 150; ++i) {
    const double a = u(rng);
    const double b = u(rng);
    const double y = std::sin(a) + b * b;
    if (i < 100) {
      s.fx.insert(s.fx.end(), {a, b});
      s.fy.push_back(y);
    } else {
      s.vx.insert(s.vx.end(), {a, b});
      s.vy.push_back(y);
    }
  }
  return s;
}

KanModel trained_model(const Split& s) {
  KanModel m = KanModel::numeric(ModelShape{2, 2, 0}, NumericInit{NumericBasis::Spline, 5, 3, 0.1, 3}, s.fit());
  fit_stage(m, s.fit(), StageOptions{100, 1e-2, {}, std::nullopt, false, {}});
  return m;
}

std::optional<AffineParams> fixed_start(std::size_t, OpId) { return AffineParams{0.5, 0.8, 0.1, 0.0}; }

}  // namespace

TEST(Gsr, FirstSelectionIsArgminOfIndependentlyTunedTrials) {
  const Split s = make_split(1);
  const KanModel base = trained_model(s);
  GsrConfig cfg;
  cfg.tau = 5;
  cfg.samples = 32;
  cfg.max_edges = 1;
  cfg.warm_start = fixed_start;
  cfg.check_restore = true;
  KanModel m = base;
  const GsrResult r = gsr(m, s.fit(), s.val(), cfg);
  ASSERT_TRUE(r.valid);
  ASSERT_EQ(r.trials.size(), kLibrarySize);
  EXPECT_EQ(r.restore_mismatches, 0u);

  // most important numeric edge, ties to the lowest id
  const auto imp = edge_importance(base, s.fit());
  std::size_t pick = 0;
  for (std::size_t e = 1; e < imp.size(); ++e)
    if (imp[e] > imp[pick]) pick = e;

  std::size_t best = 0;
  std::vector<double> j(kLibrarySize);
  for (std::size_t k = 0; k < kLibrarySize; ++k) {
    KanModel c = base;
    c.edge(pick) = SymbolicEdge{op_at(k), *fixed_start(pick, op_at(k))};
    const StageResult sr = fit_stage(c, s.fit(), StageOptions{5, 1e-2, {}, std::nullopt, false, {}});
    j[k] = sr.valid ? mean_squared_error(c, s.val()) : INFINITY;
    EXPECT_EQ(r.trials[k].edge, pick);
    EXPECT_EQ(r.trials[k].form, op_at(k));
    EXPECT_DOUBLE_EQ(r.trials[k].loss, j[k]) << name(op_at(k));
    if (j[k] < j[best]) best = k;
  }
  for (std::size_t k = 0; k < kLibrarySize; ++k) EXPECT_EQ(r.trials[k].committed, k == best);
  const auto* se = std::get_if<SymbolicEdge>(&m.edge(pick));
  ASSERT_NE(se, nullptr);
  EXPECT_EQ(se->form, op_at(best));
  EXPECT_DOUBLE_EQ(mean_squared_error(m, s.val()), j[best]);
  for (std::size_t e = 0; e < m.edge_count(); ++e)
    if (e != pick) EXPECT_EQ(kind_of(m.edge(e)), EdgeKind::Spline);
}

TEST(Gsr, FullRunRespectsBudgetAndCommitsArgmins) {
  const Split s = make_split(2);
  KanModel m = trained_model(s);
  const std::size_t M = m.active_edge_count();
  GsrConfig cfg;
  cfg.tau = 4;
  cfg.samples = 32;
  cfg.run_id = "t";
  cfg.record_timing = false;
  const GsrResult r = gsr(m, s.fit(), s.val(), cfg);
  ASSERT_TRUE(r.valid) << r.reason;
  EXPECT_EQ(r.committed_edges.size() + r.flagged.size(), M);
  EXPECT_LE(r.trials.size(), M * kLibrarySize);
  EXPECT_LE(r.finetune_steps, M * kLibrarySize * cfg.tau + M * cfg.tau);
  for (std::size_t e : r.committed_edges) {
    double jmin = INFINITY;
    const TrialRecord* committed = nullptr;
    for (const auto& t : r.trials)
      if (t.edge == e) {
        jmin = std::min(jmin, t.loss);
        if (t.committed) {
          EXPECT_EQ(committed, nullptr);
          committed = &t;
        }
      }
    ASSERT_NE(committed, nullptr);
    EXPECT_EQ(committed->loss, jmin);
    EXPECT_EQ(std::get<SymbolicEdge>(m.edge(e)).form, committed->form);
  }
  const Composition c = compose_expression(m);
  EXPECT_TRUE(c.placeholders.empty());
  for (std::size_t i = 0; i < 20; ++i) {
    const auto x = s.val().row(i);
    EXPECT_NEAR(expr::evaluate(c.tree, std::vector<double>(x.begin(), x.end())), m.predict(x),
                1e-9 * std::max(1.0, std::abs(m.predict(x))));
  }
}

TEST(Gsr, ReusingTheWinningTrialEqualsRetuning) {
  const Split s = make_split(3);
  const KanModel base = trained_model(s);
  GsrConfig cfg;
  cfg.tau = 3;
  cfg.samples = 32;
  cfg.max_edges = 3;
  cfg.record_timing = false;
  KanModel a = base;
  KanModel b = base;
  gsr(a, s.fit(), s.val(), cfg);
  cfg.reuse_winning_trial = false;
  gsr(b, s.fit(), s.val(), cfg);
  EXPECT_TRUE(a == b);
}

TEST(Gsr, TrialLogFormat) {
  std::vector<TrialRecord> t{{"r1", 3, OpId::Sin, 0.125, true, 1.5}, {"r1", 3, OpId::Cos, INFINITY, false, 0.0}};
  std::ostringstream out;
  write_trial_log(out, t);
  EXPECT_EQ(out.str(),
            "run_id,edge_id,form_id,J,committed,wall_ms\n"
            "r1,3,13,0.125,1,1.500\n"
            "r1,3,14,inf,0,0.000\n");
}

TEST(AutoSym, RecoversExactlyRepresentableEdges) {
  // hidden edge x^2 and output edge 2u + 1, both held exactly by cubic splines
  const std::vector<double> x{-1.0, -0.5, 0.0, 0.5, 1.0, 0.25, -0.75};
  std::vector<double> y;
  for (double v : x) y.push_back(2.0 * v * v + 1.0);
  const Batch b{x, y, 1};
  KanModel m(ModelShape{1, 1, 0}, PrunedEdge{});
  SplineBasis h(Range{-1.2, 1.2}, 6);
  h.coef = least_squares_coefficients(h, [](double v) { return v * v; });
  SplineBasis o(Range{-0.5, 1.5}, 6);
  o.coef = least_squares_coefficients(o, [](double v) { return 2.0 * v + 1.0; });
  m.edge(0) = SplineEdge{h};
  m.edge(1) = SplineEdge{o};

  AutoSymConfig cfg;
  cfg.polish_steps = 0;
  const AutoSymResult r = autosym(m, b, cfg);
  ASSERT_TRUE(r.valid);
  ASSERT_EQ(r.choices.size(), 2u);
  EXPECT_EQ(r.choices[0].fit.form, OpId::Square);
  // a linear edge is also held exactly by abs() away from its kink
  EXPECT_LT(r.choices[1].fit.mse, 1e-12) << name(r.choices[1].fit.form);
  EXPECT_LT(mean_squared_error(m, b), 1e-12);
  const Composition c = compose_expression(m);
  for (double v : {-0.9, 0.3, 0.8}) EXPECT_NEAR(expr::evaluate(c.tree, std::vector<double>{v}), 2.0 * v * v + 1.0, 1e-6);
  EXPECT_TRUE(expr::contains_power(c.tree, 2));
}

TEST(Compose, NumericEdgesBecomePlaceholders) {
  KanModel m(ModelShape{2, 1, 1}, SymbolicEdge{OpId::Identity, {}});
  SplineBasis h(Range{-1.0, 1.0}, 4);
  m.edge(3) = SplineEdge{h};
  m.prune_unit(0);
  const Composition c = compose_expression(m, {"a", "b"});
  EXPECT_EQ(c.placeholders, std::vector<std::size_t>{3});
  EXPECT_NE(c.text.find("phi3"), std::string::npos);
  EXPECT_EQ(c.text.find("x1"), std::string::npos);
}

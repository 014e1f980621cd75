#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <set>

#include "kansr/diff.hpp"
#include "kansr/error.hpp"
#include "kansr/oplib.hpp"
#include "oracles.hpp"

using namespace kansr;

TEST(Library, TwentyFiveUniquelyNamedForms) {
  EXPECT_EQ(kLibrarySize, 25u);
  std::set<std::string> names;
  for (OpId id : all_forms()) {
    names.insert(std::string(name(id)));
    EXPECT_EQ(op_from_name(name(id)), id);
    EXPECT_EQ(op_at(form_id(id)), id);
  }
  EXPECT_EQ(names.size(), 25u);
  EXPECT_FALSE(op_from_name("softplus").has_value());
}

TEST(Library, ApplyMatchesStandardFunctions) {
  for (double u : {-1.7, -0.3, 0.4, 1.1}) {
    EXPECT_DOUBLE_EQ(apply(OpId::Square, u).value, u * u);
    EXPECT_DOUBLE_EQ(apply(OpId::Pow5, u).value, u * u * u * u * u);
    EXPECT_DOUBLE_EQ(apply(OpId::Inv2, u).value, 1.0 / (u * u));
    EXPECT_DOUBLE_EQ(apply(OpId::Sin, u).value, std::sin(u));
    EXPECT_DOUBLE_EQ(apply(OpId::Gauss, u).value, std::exp(-u * u));
    EXPECT_DOUBLE_EQ(apply(OpId::Atan, u).value, std::atan(u));
    EXPECT_DOUBLE_EQ(apply(OpId::Zero, u).value, 0.0);
    EXPECT_DOUBLE_EQ(apply(OpId::Const, u).value, 1.0);
    EXPECT_DOUBLE_EQ(apply(OpId::Sgn, u).deriv, 0.0);
  }
  EXPECT_EQ(power_of(OpId::Cube), 3);
  EXPECT_EQ(power_of(OpId::Inv3), -3);
  EXPECT_EQ(power_of(OpId::Sin), 0);
}

TEST(Library, DerivativesMatchFiniteDifferences) {
  for (OpId id : all_forms()) {
    if (id == OpId::Sgn || id == OpId::Abs) continue;
    for (double u : {0.21, 0.47, 0.83}) {
      const double h = 1e-6;
      const double fd = (apply(id, u + h).value - apply(id, u - h).value) / (2 * h);
      EXPECT_NEAR(apply(id, u).deriv, fd, 1e-5 * std::max(1.0, std::abs(fd))) << name(id) << " at " << u;
    }
  }
}

TEST(Library, DomainGuardClampsAndFlags) {
  const OpValue s = apply(OpId::Sqrt, -4.0);
  EXPECT_TRUE(s.saturated);
  EXPECT_TRUE(std::isfinite(s.value));
  EXPECT_EQ(s.deriv, 0.0);
  const OpValue l = apply(OpId::Log, 0.0);
  EXPECT_TRUE(l.saturated);
  EXPECT_TRUE(std::isfinite(l.value));
  const OpValue a = apply(OpId::Atanh, 1.0);
  EXPECT_TRUE(a.saturated);
  EXPECT_TRUE(std::isfinite(a.value));
  EXPECT_FALSE(apply(OpId::Sqrt, 2.0).saturated);
}

TEST(SymbolicEdge, RecordedGradientMatchesFiniteDifferences) {
  for (OpId id : {OpId::Sin, OpId::Log, OpId::Inv, OpId::Pow4, OpId::Tanh, OpId::Asin, OpId::Gauss}) {
    const std::vector<double> p0{1.3, 0.4, 0.1, 0.5, 0.7};  // alpha beta gamma delta x
    auto f = [&](const std::vector<double>& q) {
      return SymbolicEdge{id, AffineParams{q[0], q[1], q[2], q[3]}}.eval(q[4]);
    };
    diff::Tape tape;
    std::array<std::uint32_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) idx[k] = tape.parameter(p0[k]).index;
    const diff::Var xv = tape.parameter(p0[4]);
    const diff::Var out =
        record_symbolic(tape, id, AffineParams{p0[0], p0[1], p0[2], p0[3]}, idx, p0[4], xv.index);
    EXPECT_NEAR(out.value(), f(p0), 1e-14);
    const auto g = tape.backward(out);
    for (std::size_t k = 0; k < 5; ++k)
      EXPECT_LT(oracle::rel_err(g[k], oracle::central_diff(f, p0, k, 1e-6), 1e-3), 1e-6) << name(id) << " k=" << k;
    const SymbolicEdge se{id, AffineParams{p0[0], p0[1], p0[2], p0[3]}};
    EXPECT_NEAR(se.eval_with_derivative(p0[4]).second, g[4], 1e-12);
  }
}

TEST(DomainSafeStart, KeepsArgumentInsideDomain) {
  for (OpId id : all_forms()) {
    for (double sign : {-1.0, 1.0})
      for (std::size_t level = 0; level < 4; ++level) {
        const auto [beta, gamma] = domain_safe_start(id, -3.0, 2.0, sign, level);
        for (int i = 0; i <= 50; ++i) {
          const double u = beta * (-3.0 + 5.0 * i / 50.0) + gamma;
          EXPECT_FALSE(apply(id, u).saturated) << name(id);
        }
        if (id == OpId::Inv || id == OpId::Inv2 || id == OpId::Inv3) {
          const double a = beta * -3.0 + gamma;
          const double b = beta * 2.0 + gamma;
          EXPECT_GT(a * b, 0.0) << "pole inside range for " << name(id);
        }
      }
  }
}

TEST(LocalFit, RecoversExactAffineSine) {
  std::vector<Sample> s;
  for (int i = 0; i < 64; ++i) {
    const double x = -2.0 + 4.0 * i / 63.0;
    s.push_back({x, 2.0 * std::sin(1.5 * x + 0.3) - 1.0});
  }
  const LocalFit f = fit_affine_local(OpId::Sin, s);
  EXPECT_LT(f.mse, 1e-6);
  const SymbolicEdge e{OpId::Sin, f.affine};
  for (const auto& p : s) EXPECT_NEAR(e.eval(p.x), p.y, 1e-3);
}

TEST(LocalFit, ClosedFormAlphaDeltaForLinearForms) {
  std::vector<Sample> s;
  for (int i = 0; i < 32; ++i) {
    const double x = 0.1 * i;
    s.push_back({x, -3.0 * x + 4.0});
  }
  const LocalFit f = fit_affine_local(OpId::Identity, s);
  EXPECT_LT(f.mse, 1e-20);
  const LocalFit c = fit_affine_local(OpId::Const, s);
  double mean = 0.0;
  for (const auto& p : s) mean += p.y;
  mean /= static_cast<double>(s.size());
  const SymbolicEdge ce{OpId::Const, c.affine};
  EXPECT_NEAR(ce.eval(0.0), mean, 1e-12);
}

TEST(LocalFit, RankingPrefersTrueFormAndIsSeedDeterministic) {
  std::vector<Sample> s;
  for (int i = 0; i < 64; ++i) {
    const double x = -1.0 + 2.0 * i / 63.0;
    s.push_back({x, 0.5 * x * x + 0.2});
  }
  const auto forms = all_forms();
  const auto r1 = rank_forms_locally(s, forms, LocalFitOptions{8, 200, 0.05, 1e-4, 7});
  const auto r2 = rank_forms_locally(s, forms, LocalFitOptions{8, 200, 0.05, 1e-4, 7});
  ASSERT_EQ(r1.size(), forms.size());
  EXPECT_LT(r1.front().mse, 1e-10);
  for (std::size_t i = 0; i + 1 < r1.size(); ++i) {
    EXPECT_LE(r1[i].mse, r1[i + 1].mse);
    EXPECT_EQ(r1[i].form, r2[i].form);
    EXPECT_EQ(r1[i].mse, r2[i].mse);
  }
  bool square_exact = false;
  for (const auto& f : r1) square_exact = square_exact || (f.form == OpId::Square && f.mse < 1e-10);
  EXPECT_TRUE(square_exact);
}

TEST(LocalFit, TooFewSamplesThrows) {
  std::vector<Sample> s(5, Sample{0.0, 0.0});
  EXPECT_THROW(fit_affine_local(OpId::Sin, s), ConfigError);
}

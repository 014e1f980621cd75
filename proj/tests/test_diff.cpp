#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kansr/diff.hpp"
#include "oracles.hpp"
#include "random_program.hpp"

using namespace kansr::diff;

TEST(Tape, RandomGraphsMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst = 0.0;
  for (int g = 0; g < 100; ++g) {
    const std::size_t np = 2 + rng() % 4;
    const auto prog = oracle::random_program(rng, np);
    std::vector<double> p(np);
    for (auto& v : p) v = nd(rng);
    Tape tape;
    std::vector<Var> vars;
    for (double v : p) vars.push_back(tape.parameter(v));
    const Var out = oracle::run(prog, vars);
    EXPECT_NEAR(out.value(), oracle::run(prog, p), 1e-12);
    const std::vector<double> grad = tape.backward(out);
    ASSERT_EQ(grad.size(), np);
    auto f = [&](const std::vector<double>& q) { return oracle::run(prog, q); };
    for (std::size_t i = 0; i < np; ++i) {
      const double fd = oracle::central_diff(f, p, i, 1e-5 * std::max(1.0, std::abs(p[i])));
      worst = std::max(worst, oracle::rel_err(grad[i], fd, 1e-3));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Tape, ReplayReproducesPrimitiveValues) {
  Tape tape;
  const Var a = tape.parameter(0.7);
  const Var b = tape.parameter(-1.3);
  const Var c = sin(a * b) + exp(b) / (a + 2.0) - pow(a, 3);
  const auto rep = tape.replay();
  ASSERT_EQ(rep.size(), tape.size());
  for (std::size_t i = 0; i < rep.size(); ++i) EXPECT_DOUBLE_EQ(rep[i], tape.value(static_cast<std::uint32_t>(i)));
  EXPECT_DOUBLE_EQ(c.value(), std::sin(0.7 * -1.3) + std::exp(-1.3) / 2.7 - std::pow(0.7, 3));
}

TEST(Tape, ParametersKeepRegistrationOrder) {
  Tape tape;
  const Var c = tape.constant(5.0);
  const Var a = tape.parameter(2.0);
  const Var b = tape.parameter(3.0);
  const auto g = tape.backward(a * b * c);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_DOUBLE_EQ(g[0], 15.0);
  EXPECT_DOUBLE_EQ(g[1], 10.0);
}

TEST(Tape, FusedNodeUsesGivenPartials) {
  Tape tape;
  const Var a = tape.parameter(1.0);
  const Var b = tape.parameter(2.0);
  const std::uint32_t args[] = {a.index, b.index};
  const double partials[] = {4.0, -0.5};
  const Var f = tape.record(123.0, args, partials);
  const auto g = tape.backward(f * 2.0);
  EXPECT_DOUBLE_EQ(g[0], 8.0);
  EXPECT_DOUBLE_EQ(g[1], -1.0);
}

TEST(Tape, DomainGuardKeepsValuesFinite) {
  Tape tape;
  const Var z = tape.parameter(0.0);
  EXPECT_TRUE(std::isfinite(log(z).value()));
  EXPECT_TRUE(std::isfinite(sqrt(z).value()));
  const Var one = tape.parameter(1.0);
  EXPECT_TRUE(std::isfinite(atanh(one).value()));
  for (double g : tape.backward(log(z) + atanh(one))) EXPECT_TRUE(std::isfinite(g));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // bias-corrected first step is lr * g / (|g| + eps)
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.5, -3.0};
  AdamState st(2, 0.1);
  adam_step(p, g, st);
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  std::vector<double> p{0.0};
  AdamState st(1, 0.01);
  adam_step(p, std::vector<double>{1.0}, st);
  adam_step(p, std::vector<double>{2.0}, st);
  const double m = 0.9 * 0.1 + 0.1 * 2.0;
  const double v = 0.999 * 0.001 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81);
  const double vh = v / (1 - 0.999 * 0.999);
  const double expected = -0.01 * 1.0 / (1.0 + 1e-8) - 0.01 * mh / (std::sqrt(vh) + 1e-8);
  EXPECT_NEAR(p[0], expected, 1e-12);
}

TEST(Adam, LengthMismatchThrows) {
  std::vector<double> p{0.0, 1.0};
  AdamState st(2);
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0}, st), std::invalid_argument);
}

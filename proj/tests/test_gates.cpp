#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "kansr/diff.hpp"
#include "kansr/gates.hpp"
#include "oracles.hpp"

using namespace kansr;

namespace {

GatedEdge random_edge(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  GatedEdge e(std::log(2.0));
  for (std::size_t k = 0; k < kLibrarySize; ++k) {
    e.logits[k] = nd(rng);
    e.affine[k] = AffineParams{0.5 + 0.2 * nd(rng), 0.3 + 0.1 * nd(rng), 1.5 + 0.1 * nd(rng), 0.1 * nd(rng)};
  }
  return e;
}

// Softmax over the active entries written out directly.
double mixture(const GatedEdge& e, double x) {
  double z = 0.0;
  for (std::size_t k = 0; k < kLibrarySize; ++k)
    if (e.active[k]) z += std::exp(e.logits[k]);
  double y = 0.0;
  for (std::size_t k = 0; k < kLibrarySize; ++k) {
    if (!e.active[k]) continue;
    const double s = e.scale(k);
    const double inner = SymbolicEdge{op_at(k), e.affine[k]}.eval(x);
    y += std::exp(e.logits[k]) / z * s * std::asinh(inner / s);
  }
  return y;
}

}  // namespace

TEST(Gates, UniformInitialGate) {
  const GatedEdge e(0.0);
  const auto p = e.probabilities();
  for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 25.0);
  EXPECT_NEAR(gate_entropy(e), std::log(25.0), 1e-12);
  EXPECT_EQ(gate_l1(e), 0.0);
  EXPECT_EQ(e.parameter_count(), 25u * 5 + 1);
}

TEST(Gates, SimplexAndMaskedEntriesAreZero) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    GatedEdge e = random_edge(rng);
    e = topk_prune(e, 1 + rng() % 25);
    const auto p = e.probabilities();
    double sum = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (!e.active[k]) EXPECT_EQ(p[k], 0.0);
      sum += p[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Gates, CompressIsScaledAsinh) {
  EXPECT_DOUBLE_EQ(compress(3.0, 2.0), 2.0 * std::asinh(1.5));
  EXPECT_NEAR(compress(1e-6, 1.0), 1e-6, 1e-15);
  EXPECT_LT(compress(1e6, 1.0), 20.0);
}

TEST(Gates, EvalMatchesDirectMixture) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    GatedEdge e = topk_prune(random_edge(rng), 10);
    for (double x : {-0.5, 0.1, 0.9}) {
      EXPECT_NEAR(e.eval(x), mixture(e, x), 1e-12);
      const double h = 1e-6;
      const double fd = (e.eval(x + h) - e.eval(x - h)) / (2 * h);
      EXPECT_NEAR(e.eval_with_derivative(x).second, fd, 1e-6);
    }
  }
}

TEST(Gates, TopkKeepsExactlyKMostProbable) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const GatedEdge e = random_edge(rng);
    const std::size_t k = 1 + rng() % 24;
    const GatedEdge t = topk_prune(e, k);
    EXPECT_EQ(t.active_count(), k);
    const auto p = e.probabilities();
    double min_kept = 1.0;
    double max_dropped = 0.0;
    for (std::size_t j = 0; j < kLibrarySize; ++j) {
      if (t.active[j]) min_kept = std::min(min_kept, p[j]);
      else max_dropped = std::max(max_dropped, p[j]);
    }
    EXPECT_GE(min_kept, max_dropped);
    // survivors keep their relative order
    const auto q = t.probabilities();
    for (std::size_t a = 0; a < kLibrarySize; ++a)
      for (std::size_t b = 0; b < kLibrarySize; ++b)
        if (t.active[a] && t.active[b] && p[a] > p[b]) EXPECT_GT(q[a], q[b]);
  }
}

TEST(Gates, TopkTiesGoToLowestFormId) {
  GatedEdge e(0.0);
  const GatedEdge t = topk_prune(e, 3);
  EXPECT_TRUE(t.active[0] && t.active[1] && t.active[2]);
  EXPECT_EQ(t.active_count(), 3u);
  EXPECT_EQ(gate_argmax(e), op_at(0));
  EXPECT_THROW(topk_prune(e, 0), std::invalid_argument);
}

TEST(Gates, ArgmaxFollowsLogits) {
  GatedEdge e(0.0);
  e.logits[form_id(OpId::Sin)] = 3.0;
  e.logits[form_id(OpId::Cos)] = 2.0;
  EXPECT_EQ(gate_argmax(e), OpId::Sin);
  e.active[form_id(OpId::Sin)] = 0;
  EXPECT_EQ(gate_argmax(e), OpId::Cos);
}

TEST(Gates, ParameterRoundTrip) {
  std::mt19937_64 rng(4);
  const GatedEdge e = random_edge(rng);
  std::vector<double> buf(e.parameter_count());
  e.write_parameters(buf);
  GatedEdge f(0.0);
  f.read_parameters(buf);
  EXPECT_EQ(f.logits, e.logits);
  EXPECT_EQ(f.affine, e.affine);
  EXPECT_EQ(f.log_scale, e.log_scale);
}

TEST(Gates, RecordedNodeGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  GatedEdge e = topk_prune(random_edge(rng), 7);
  const double x0 = 0.4;
  std::vector<double> p0(e.parameter_count() + 1);
  e.write_parameters(std::span(p0).first(e.parameter_count()));
  p0.back() = x0;
  auto f = [&](const std::vector<double>& q) {
    GatedEdge g = e;
    g.read_parameters(std::span(q).first(e.parameter_count()));
    return g.eval(q.back()) + 0.3 * gate_entropy(g) + 0.2 * gate_l1(g);
  };
  diff::Tape tape;
  for (double v : p0) tape.parameter(v);
  const auto probs = e.probabilities();
  const diff::Var y = record_gated(tape, e, probs, 0, x0, static_cast<std::uint32_t>(p0.size() - 1));
  const diff::Var pen = record_gate_penalty(tape, e, probs, 0, 0.3, 0.2);
  const diff::Var total = y + pen;
  EXPECT_NEAR(total.value(), f(p0), 1e-12);
  const auto g = tape.backward(total);
  double worst = 0.0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    // masked logits sit at a kink of |.|; skip them
    if (i < kLibrarySize && (!e.active[i] || e.logits[i] == 0.0)) continue;
    worst = std::max(worst, oracle::rel_err(g[i], oracle::central_diff(f, p0, i, 1e-6), 1e-3));
  }
  EXPECT_LT(worst, 1e-5);
}

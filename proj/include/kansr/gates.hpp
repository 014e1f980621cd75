#pragma once

// Gated operator edges: a softmax-weighted mixture over the operator library
// where every operator output is compressed with s*asinh(z/s) before mixing.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kansr/diff.hpp"
#include "kansr/oplib.hpp"

namespace kansr {

struct GatedEdge {
  std::vector<double> logits;        // one per library form
  std::vector<AffineParams> affine;  // one per library form
  std::vector<double> log_scale;     // log s: one shared entry, or one per form
  std::vector<std::uint8_t> active;  // 1 = operator still in the candidate set

  GatedEdge() = default;
  /// All K operators active, zero logits (uniform gate), identity affine.
  explicit GatedEdge(double initial_log_scale, bool scale_per_operator = false);

  [[nodiscard]] double scale(std::size_t k) const;

  [[nodiscard]] std::size_t active_count() const;
  [[nodiscard]] std::vector<OpId> active_forms() const;
  /// Softmax over active entries; masked entries are exactly 0.
  [[nodiscard]] std::vector<double> probabilities() const;
  [[nodiscard]] double eval(double x) const;
  [[nodiscard]] std::pair<double, double> eval_with_derivative(double x) const;

  /// Parameter layout: K logits, K*(alpha,beta,gamma,delta), log s entries.
  [[nodiscard]] std::size_t parameter_count() const { return kLibrarySize * 5 + log_scale.size(); }
  void write_parameters(std::span<double> out) const;
  void read_parameters(std::span<const double> in);
};

/// s*asinh(z/s).
double compress(double z, double s);

/// Entropy of the active gate distribution (0*log 0 := 0).
double gate_entropy(const GatedEdge& e);
/// Sum of |logit| over active entries.
double gate_l1(const GatedEdge& e);

/// Keeps the k most probable active operators (ties: lowest form id).
GatedEdge topk_prune(const GatedEdge& e, std::size_t k);

/// Most probable active operator (ties: lowest form id).
OpId gate_argmax(const GatedEdge& e);

/// Records the gated edge as one fused tape node. param_base is the tape index
/// of the edge's first parameter in write_parameters order.
diff::Var record_gated(diff::Tape& tape, const GatedEdge& e, std::span<const double> probs,
                       std::uint32_t param_base, double x, std::optional<std::uint32_t> x_index);

/// Records entropy and l1 gate penalties for one edge: weights (w_ent, w_l1).
diff::Var record_gate_penalty(diff::Tape& tape, const GatedEdge& e, std::span<const double> probs,
                              std::uint32_t param_base, double w_ent, double w_l1);

}  // namespace kansr

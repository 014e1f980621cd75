#pragma once

// Reverse-mode automatic differentiation over a dynamic scalar tape, and the
// Adam optimiser used by every training stage.
//
// A Tape records one node per scalar operation. Each node keeps its forward
// value plus the local partial derivatives with respect to its arguments, so
// the backward sweep is a single reverse pass over a flat array. Fused nodes
// (an edge function with many parameters, a loss over many residuals) are
// recorded through Tape::record with explicit partials.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kansr::diff {

/// Primitive operation codes. Custom marks a fused node whose value cannot be
/// replayed from its arguments alone.
enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  AddConst,
  MulConst,
  PowInt,
  Exp,
  Log,
  Sin,
  Cos,
  Tan,
  Tanh,
  Asinh,
  Sqrt,
  Abs,
  Atan,
  Asin,
  Acos,
  Atanh,
  Gaussian,
  Sign,
  ClampMin,
  ClampMax,
  Sum,
  Custom,
};

/// Inputs closer than this to the boundary of an open domain are clamped.
inline constexpr double kDomainMargin = 1e-8;

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;

  [[nodiscard]] double value() const;
};

class Tape {
 public:
  Tape() = default;

  /// Registers a trainable parameter. Gradients returned by backward() follow
  /// the registration order of parameters.
  Var parameter(double value);
  /// A leaf that is not a parameter (input data, constants).
  Var constant(double value);

  /// Records a fused node. args and partials must have equal length.
  Var record(double value, std::span<const std::uint32_t> args,
             std::span<const double> partials, Op op = Op::Custom,
             double aux = 0.0);
  Var record1(Op op, double value, Var a, double da, double aux = 0.0);
  Var record2(Op op, double value, Var a, double da, Var b, double db);

  /// Runs the reverse sweep from output and returns d(output)/d(parameter)
  /// in parameter registration order.
  [[nodiscard]] std::vector<double> backward(Var output) const;
  /// Full adjoint vector (one entry per node).
  [[nodiscard]] std::vector<double> adjoints(Var output) const;

  /// Recomputes every primitive node from its arguments, starting from the
  /// recorded leaf values. Custom nodes keep their recorded value.
  [[nodiscard]] std::vector<double> replay() const;

  [[nodiscard]] double value(std::uint32_t index) const { return nodes_[index].value; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] std::size_t parameter_count() const { return params_.size(); }
  [[nodiscard]] std::size_t saturation_count() const { return saturations_; }
  void note_saturation() { ++saturations_; }

  /// Drops all nodes but keeps allocated capacity.
  void clear();

 private:
  struct Node {
    double value;
    double aux;
    std::uint32_t arg_begin;
    std::uint32_t arg_count;
    Op op;
  };

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> args_;
  std::vector<double> partials_;
  std::vector<std::uint32_t> params_;
  std::size_t saturations_ = 0;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator-(Var a);

/// Integer power. Negative exponents guard the base away from zero.
Var pow(Var a, int n);
Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var tan(Var a);
Var tanh(Var a);
Var asinh(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var atan(Var a);
Var asin(Var a);
Var acos(Var a);
Var atanh(Var a);
/// exp(-a^2)
Var gaussian(Var a);
/// sgn(a) with derivative zero everywhere.
Var sign(Var a);
Var clamp_min(Var a, double lo);
Var clamp_max(Var a, double hi);
Var sum(std::span<const Var> terms);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double learning_rate = 1e-2)
      : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

/// One Adam update in place. Throws std::invalid_argument on length mismatch.
void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state);

}  // namespace kansr::diff

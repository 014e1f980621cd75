#pragma once

// The symbolic operator library, affine-wrapped symbolic edges
// alpha * g(beta * x + gamma) + delta, and local least-squares fitting.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kansr/diff.hpp"

namespace kansr {

/// Library forms in tie-break order. The numeric value is the stable form id.
enum class OpId : std::uint8_t {
  Const,
  Identity,
  Square,
  Cube,
  Pow4,
  Pow5,
  Inv,
  Inv2,
  Inv3,
  Sqrt,
  InvSqrt,
  Log,
  Exp,
  Sin,
  Cos,
  Tan,
  Tanh,
  Abs,
  Sgn,
  Atan,
  Asin,
  Acos,
  Atanh,
  Gauss,
  Zero,
};

inline constexpr std::size_t kLibrarySize = 25;

enum class Domain : std::uint8_t { All, Positive, NonZero, OpenUnit };

struct OpInfo {
  OpId id;
  std::string_view name;
  Domain domain;
  bool differentiable;
};

/// All K forms, indexed by form id.
const std::array<OpInfo, kLibrarySize>& library();
const OpInfo& info(OpId id);
std::string_view name(OpId id);
std::optional<OpId> op_from_name(std::string_view name);
inline std::size_t form_id(OpId id) { return static_cast<std::size_t>(id); }
inline OpId op_at(std::size_t id) { return static_cast<OpId>(id); }
std::vector<OpId> all_forms();

/// Integer exponent for the power-like forms (x^2..x^5, 1/x..1/x^3), else 0.
int power_of(OpId id);

/// g(u) and g'(u) with the domain guard applied to u.
struct OpValue {
  double value;
  double deriv;
  bool saturated;
};
OpValue apply(OpId id, double u);

struct AffineParams {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.0;
  double delta = 0.0;

  bool operator==(const AffineParams&) const = default;
};

struct SymbolicEdge {
  OpId form = OpId::Identity;
  AffineParams affine;

  [[nodiscard]] double eval(double x) const;
  /// Value and derivative with respect to x.
  [[nodiscard]] std::pair<double, double> eval_with_derivative(double x) const;
};

/// Records alpha*g(beta*x+gamma)+delta as one fused tape node. params holds the
/// tape indices of (alpha, beta, gamma, delta); x_index is empty when x is a
/// constant.
diff::Var record_symbolic(diff::Tape& tape, OpId form, const AffineParams& p,
                          std::span<const std::uint32_t, 4> params, double x,
                          std::optional<std::uint32_t> x_index);

/// Starting (beta, gamma) for a form so that beta*x+gamma stays inside the
/// form's domain for x in [xlo, xhi]. level selects the scale (0..3).
std::pair<double, double> domain_safe_start(OpId form, double xlo, double xhi, double sign, std::size_t level);

struct Sample {
  double x;
  double y;
};

struct LocalFit {
  OpId form;
  AffineParams affine;
  double mse;
};

struct LocalFitOptions {
  std::size_t starts = 8;
  std::size_t steps = 200;
  double lr = 0.05;
  double lr_final = 1e-4;
  std::uint64_t seed = 0;
};

/// Fits the affine wrapper of one form to samples. Throws ConfigError with
/// fewer than eight samples; a fit that never produces a finite loss reports
/// mse = +inf.
LocalFit fit_affine_local(OpId form, std::span<const Sample> samples, const LocalFitOptions& opt = {});

/// Fits every candidate and orders them by local mse, ties by form id.
std::vector<LocalFit> rank_forms_locally(std::span<const Sample> samples, std::span<const OpId> candidates,
                                         const LocalFitOptions& opt = {});

}  // namespace kansr

#pragma once

// Immutable expression trees shared by formula parsing and symbolic
// composition, with canonical text serialization and light simplification.
//
// Grammar (whitespace insignificant):
//   expr    := term (('+' | '-') term)*
//   term    := ['-'] power (('*' | '/') power)*
//   power   := primary ['^' ['-'] integer]
//   primary := number | 'pi' | name | func '(' expr ')' | '(' expr ')'
// Functions are library names: sqrt log exp sin cos tan tanh abs sgn arctan
// arcsin arccos arctanh gauss. Subtraction and division are sugar for adding a
// negated term and multiplying by a power of -1.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kansr/oplib.hpp"

namespace kansr::expr {

enum class Kind : std::uint8_t { Constant, Variable, Unary, Pow, Mul, Add };

struct Node;
using Tree = std::shared_ptr<const Node>;

struct Node {
  Kind kind = Kind::Constant;
  double value = 0.0;       // Constant
  std::size_t var = 0;      // Variable (zero-based)
  OpId op = OpId::Identity; // Unary
  int exponent = 1;         // Pow
  std::vector<Tree> children;
};

Tree constant(double v);
Tree variable(std::size_t index);
Tree unary(OpId op, Tree child);
Tree pow(Tree base, int exponent);
Tree mul(std::vector<Tree> factors);
Tree add(std::vector<Tree> terms);

/// alpha*g(beta*x+gamma)+delta expressed in tree nodes (unsimplified).
Tree affine_leaf(OpId form, const AffineParams& p, Tree x);

bool equal(const Tree& a, const Tree& b);

struct ParseOptions {
  /// Variable names in index order; empty means x1, x2, ...
  std::vector<std::string> variables;
};

/// Throws ParseError on malformed text or unknown names.
Tree parse(std::string_view text, const ParseOptions& opt = {});

struct SerializeOptions {
  int significant_digits = 6;
  std::vector<std::string> variables;
};

std::string serialize(const Tree& t, const SerializeOptions& opt = {});

/// Constant folding, zero-term elimination, like-term merging, distribution of
/// a constant over a sum, and canonical child ordering.
Tree simplify(const Tree& t);

double evaluate(const Tree& t, std::span<const double> vars);

/// Highest variable index + 1 (0 for constant trees).
std::size_t arity(const Tree& t);
bool contains_unary(const Tree& t, OpId op);
bool contains_power(const Tree& t, int exponent);
std::size_t node_count(const Tree& t);

}  // namespace kansr::expr

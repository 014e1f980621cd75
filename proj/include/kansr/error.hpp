#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kansr {

/// Invalid user configuration (bad manifest, plan, flags). Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Syntax error in an expression or data file, with a character or line position.
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& what, std::size_t position)
      : ConfigError(what + " at position " + std::to_string(position)), position_(position) {}

  [[nodiscard]] std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

}  // namespace kansr

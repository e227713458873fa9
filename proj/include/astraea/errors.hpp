#pragma once

#include <stdexcept>
#include <string>

namespace astraea {

// Operand shapes disagree (matmul inner dims, grid widths, mask/row alignment).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's domain (empty mask, n = 0, non-finite data).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Object used in a state that does not support the call (e.g. reading an
// unfilled cache slot).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid or infeasible configuration. `field()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace astraea

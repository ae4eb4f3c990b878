#pragma once

#include <stdexcept>
#include <string>

namespace cstt {

// Tensor shapes that cannot be combined. Messages name both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke a documented precondition (non-scalar loss, label out of
// range, empty memory, non-deterministic objective, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad or inconsistent configuration: unknown keys, unparsable values,
// checkpoint/config mismatch, unknown ablation arm.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss. `op()` names the first graph node
// whose output went non-finite.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::string op)
      : std::runtime_error(what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

}  // namespace cstt

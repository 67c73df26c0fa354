#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ulab {

/// Precondition broken by the caller (bad shapes, out-of-range ids, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid user configuration (unknown keys, inconsistent values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable input data (checkpoints, benchmark files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value met during training or differentiation.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t node = npos)
      : std::runtime_error(what), node_(node) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  /// Graph node index where the value was detected, or npos.
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace ulab

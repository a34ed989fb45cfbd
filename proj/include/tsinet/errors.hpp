#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tsinet {

/// Tensor shapes that do not fit an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent configuration (unknown keys, bad ranges).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problems with input data: missing files, corrupt containers, bad manifests.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::int64_t byte_offset = -1)
      : std::runtime_error(what), byte_offset_(byte_offset) {}

  /// Offset into the offending file, or -1 when not applicable.
  std::int64_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::int64_t byte_offset_;
};

/// Non-finite values during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric whose definition does not apply to the inputs (e.g. VC on empty ground truth).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace tsinet

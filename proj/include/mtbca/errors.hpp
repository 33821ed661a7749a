#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtbca {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined by the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid construction parameters (frequencies, sizes, omega, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input bytes. Carries the byte offset where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Dataset, label or evaluation input that violates a contract.
class DataError : public Error {
 public:
  using Error::Error;
};

/// API called in a state that does not support it.
class UsageError : public Error {
 public:
  using Error::Error;
};

class OptimizerError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or cache file that cannot be decoded. `field()` names the
/// record that failed.
class LoadError : public Error {
 public:
  LoadError(const std::string& field, const std::string& what)
      : Error("load error in '" + field + "': " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Training aborted; message carries epoch/batch/lr diagnostics.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtbca

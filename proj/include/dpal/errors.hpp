#pragma once

#include <stdexcept>
#include <string>

namespace dpal {

// Error kinds raised by the library. The CLI maps them onto exit codes:
// usage/config -> 2, data/file -> 3, internal invariant -> 4.
enum class Err {
  ZeroVector,
  InvalidTemperature,
  FormatError,
  NormError,
  InvalidConfig,
  AlreadyLabeled,
  IndexOutOfRange,
  OverlapError,
  ComplementEqualsLabel,
  EmptyTrainingSet,
  EmptyTestSet,
  PoolExhausted,
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(Err kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Err kind() const { return kind_; }

 private:
  Err kind_;
};

[[noreturn]] inline void raise(Err kind, const std::string& what) { throw Error(kind, what); }

}  // namespace dpal

#pragma once

#include <stdexcept>
#include <string>

namespace pangaea {

// Every failure raised by the library carries one of these kinds. The C API
// maps each kind onto a distinct status code.
enum class ErrorKind {
  Dimension,
  Contract,
  Config,
  Capacity,
  Domain,
  Evaluation,
  Imputation,
  Degenerate,
  UndefinedMetric,
  Fit,
  Parse,
  Io,
  Format,
  Version,
  Truncated,
  Checksum,
  Shape,
};

const char* error_kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace pangaea

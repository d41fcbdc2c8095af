#include "pangaea/error.hpp"

namespace pangaea {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Config: return "config";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Imputation: return "imputation";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Fit: return "fit";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Version: return "version";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::Shape: return "shape";
  }
  return "unknown";
}

}  // namespace pangaea

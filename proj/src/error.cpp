#include "fedev/error.hpp"

namespace fedev {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::GapDetected: return "GapDetected";
    case ErrorKind::DuplicateTimestamp: return "DuplicateTimestamp";
    case ErrorKind::NonFinitePrice: return "NonFinitePrice";
    case ErrorKind::InvalidParam: return "InvalidParam";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::ScheduleInfeasible: return "ScheduleInfeasible";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::EpisodeFinished: return "EpisodeFinished";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::CorruptPayload: return "CorruptPayload";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NonFiniteParameter: return "NonFiniteParameter";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

}  // namespace fedev

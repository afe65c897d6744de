#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedev {

enum class ErrorKind {
  MalformedRow,
  GapDetected,
  DuplicateTimestamp,
  NonFinitePrice,
  InvalidParam,
  IndexOutOfRange,
  ScheduleInfeasible,
  DomainError,
  EpisodeFinished,
  ShapeMismatch,
  LayoutMismatch,
  CorruptPayload,
  VersionMismatch,
  InsufficientData,
  EmptyInput,
  NonFiniteParameter,
  DegenerateVariance,
  IoError,
  ConfigError,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers and tests can
/// branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix that what() carries.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace fedev

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace florain {

/// Every failure the library reports falls into one of these classes. The
/// CLI maps each class to its own exit code.
enum class ErrorKind {
  InvalidArgument,
  IoFailure,
  MalformedHeader,
  MalformedRecord,
  DimensionMismatch,
  NonFiniteValue,
  TruncatedFile,
  MissingDesirable,
  NoDesirableSamples,
  DegenerateGlobalDirection,
  InsufficientSamples,
  ShrinkageFailed,
  NotPositiveDefinite,
  DegenerateRadius,
  MissingRegion,
  PreconditionerFailure,
  NonFiniteLoss,
  InstanceTooLarge,
  MalformedJson,
  GradientCheckFailed,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::MissingDesirable: return "MissingDesirable";
    case ErrorKind::NoDesirableSamples: return "NoDesirableSamples";
    case ErrorKind::DegenerateGlobalDirection: return "DegenerateGlobalDirection";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::ShrinkageFailed: return "ShrinkageFailed";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::DegenerateRadius: return "DegenerateRadius";
    case ErrorKind::MissingRegion: return "MissingRegion";
    case ErrorKind::PreconditionerFailure: return "PreconditionerFailure";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorKind::MalformedJson: return "MalformedJson";
    case ErrorKind::GradientCheckFailed: return "GradientCheckFailed";
  }
  return "Unknown";
}

/// Process exit code for an error class. 1 is left for unexpected exceptions
/// and 2 for command-line usage errors.
constexpr int exit_code(ErrorKind kind) { return 10 + static_cast<int>(kind); }

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  /// For file-format errors: byte offset of the first violation.
  Error(ErrorKind kind, const std::string& message, std::uint64_t offset)
      : std::runtime_error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) +
                           ": " + message),
        kind_(kind),
        offset_(offset) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  ErrorKind kind_;
  std::optional<std::uint64_t> offset_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace florain

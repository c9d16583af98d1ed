#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coseg {

enum class ErrorCode {
  MissingFile,
  MalformedHeader,
  TruncatedPayload,
  IoFailure,
  ShapeMismatch,
  EmptyForeground,
  DegenerateMask,
  UnknownInput,
  NoForwardPass,
  InvalidConfig,
  BatchTooSmall,
  DatasetEmpty,
  CheckpointCorrupt,
  InvalidValue,
};

std::string_view error_code_name(ErrorCode code);

/// Domain error carrying a machine-readable code. The CLI renders it as
/// `error: <code>: <detail>`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace coseg

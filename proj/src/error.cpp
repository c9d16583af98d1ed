#include "coseg/error.hpp"

namespace coseg {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::DegenerateMask: return "DegenerateMask";
    case ErrorCode::UnknownInput: return "UnknownInput";
    case ErrorCode::NoForwardPass: return "NoForwardPass";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::DatasetEmpty: return "DatasetEmpty";
    case ErrorCode::CheckpointCorrupt: return "CheckpointCorrupt";
    case ErrorCode::InvalidValue: return "InvalidValue";
  }
  return "Unknown";
}

}  // namespace coseg

#include "sentipipe/error.hpp"

namespace sentipipe {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kMalformedRow: return "MalformedRow";
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kVocabTooSmall: return "VocabTooSmall";
    case ErrorCode::kUnknownId: return "UnknownId";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kSchemeMismatch: return "SchemeMismatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kEmptyMatrix: return "EmptyMatrix";
    case ErrorCode::kModelNotFound: return "ModelNotFound";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kTaskMismatch: return "TaskMismatch";
    case ErrorCode::kLanguageMismatch: return "LanguageMismatch";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kVersionUnsupported: return "VersionUnsupported";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace sentipipe

#pragma once

#include <stdexcept>
#include <string>

namespace sentipipe {

enum class ErrorCode {
  kMissingFile,
  kMalformedRow,
  kUnknownLabel,
  kDuplicateId,
  kVocabTooSmall,
  kUnknownId,
  kInvalidConfig,
  kShapeMismatch,
  kEmptyClass,
  kSchemeMismatch,
  kEmptyDataset,
  kLengthMismatch,
  kIndexOutOfRange,
  kEmptyMatrix,
  kModelNotFound,
  kFormatError,
  kTaskMismatch,
  kLanguageMismatch,
  kIoError,
  kVersionUnsupported,
  kInvalidArgument,
};

// Stable names, also used as exception names across the C boundary.
const char* error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  const char* name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace sentipipe

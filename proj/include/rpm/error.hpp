#pragma once

#include <stdexcept>
#include <string>

namespace rpm {

enum class ErrorCode {
  kGenerationRetryExhausted,
  kInsufficientAttributeSpace,
  kShapeMismatch,
  kNonScalarLoss,
  kLengthMismatch,
  kEmptyDataset,
  kNonFiniteLoss,
  kMissingFile,
  kVersionMismatch,
  kMalformedRecord,
  kInvalidArgument,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rpm

// SPDX-License-Identifier: Apache-2.0
#include "mtlc/error.hpp"

namespace mtlc {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kArityMismatch: return "ArityMismatch";
    case ErrorCode::kDomainError: return "DomainError";
    case ErrorCode::kUnderDetermined: return "UnderDetermined";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kUndefined: return "Undefined";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kEmptySelection: return "EmptySelection";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNoLabels: return "NoLabels";
    case ErrorCode::kSpecMismatch: return "SpecMismatch";
    case ErrorCode::kNoDefinedPairs: return "NoDefinedPairs";
    case ErrorCode::kInsufficientTasks: return "InsufficientTasks";
    case ErrorCode::kInsufficientPairs: return "InsufficientPairs";
    case ErrorCode::kMissingInput: return "MissingInput";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

}  // namespace mtlc

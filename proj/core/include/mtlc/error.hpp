// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtlc {

enum class ErrorCode {
  kArityMismatch,
  kDomainError,
  kUnderDetermined,
  kNonFinite,
  kUndefined,
  kDegenerateInput,
  kParseError,
  kSchemaError,
  kConfigError,
  kEmptySelection,
  kNonFiniteLoss,
  kShapeMismatch,
  kNoLabels,
  kSpecMismatch,
  kNoDefinedPairs,
  kInsufficientTasks,
  kInsufficientPairs,
  kMissingInput,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base of every error thrown by the library. The code is stable and is what
/// callers (and the CLI exit-code mapping) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }
  /// The message without the "Kind: " prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

template <ErrorCode C>
class CodedError : public Error {
 public:
  explicit CodedError(const std::string& what) : Error(C, what) {}
};

using ArityMismatch = CodedError<ErrorCode::kArityMismatch>;
using DomainError = CodedError<ErrorCode::kDomainError>;
using UnderDetermined = CodedError<ErrorCode::kUnderDetermined>;
using NonFinite = CodedError<ErrorCode::kNonFinite>;
using Undefined = CodedError<ErrorCode::kUndefined>;
using DegenerateInput = CodedError<ErrorCode::kDegenerateInput>;
using ParseError = CodedError<ErrorCode::kParseError>;
using SchemaError = CodedError<ErrorCode::kSchemaError>;
using ConfigError = CodedError<ErrorCode::kConfigError>;
using EmptySelection = CodedError<ErrorCode::kEmptySelection>;
using NonFiniteLoss = CodedError<ErrorCode::kNonFiniteLoss>;
using ShapeMismatch = CodedError<ErrorCode::kShapeMismatch>;
using NoLabels = CodedError<ErrorCode::kNoLabels>;
using SpecMismatch = CodedError<ErrorCode::kSpecMismatch>;
using NoDefinedPairs = CodedError<ErrorCode::kNoDefinedPairs>;
using InsufficientTasks = CodedError<ErrorCode::kInsufficientTasks>;
using InsufficientPairs = CodedError<ErrorCode::kInsufficientPairs>;
using MissingInput = CodedError<ErrorCode::kMissingInput>;

}  // namespace mtlc

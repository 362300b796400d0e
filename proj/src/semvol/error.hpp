#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semvol {

enum class ErrorCode {
  InvalidArgument,
  ZeroVector,
  NonFinite,
  NotPositiveSemidefinite,
  DimensionMismatch,
  NonPositiveUpdate,
  NonPositiveDeterminant,
  Singular,
  NotSymmetric,
  EmptySequence,
  OneClassOnly,
  EmptySample,
  LengthMismatch,
  HttpError,
  MalformedResponse,
  EmptyCompletion,
  DimensionInconsistent,
  UnparseableVerdict,
  MissingFixture,
  MissingField,
  InsufficientLabels,
  ParseError,
  DuplicateId,
  IoError,
  ConfigError,
  MissingEmbeddings,
  EmptyInput,
};

// Process exit-code families used by the CLI.
enum class ErrorCategory { Config = 2, Io = 3, Remote = 4, Numerical = 5 };

std::string_view to_string(ErrorCode code) noexcept;
ErrorCategory category(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message, std::string context = {})
      : std::runtime_error(message), code_(code), context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string &context() const noexcept { return context_; }

private:
  ErrorCode code_;
  std::string context_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &message,
                              std::string context = {}) {
  throw Error(code, message, std::move(context));
}

} // namespace semvol

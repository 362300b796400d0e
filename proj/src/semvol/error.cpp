#include "semvol/error.hpp"

namespace semvol {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::ZeroVector: return "ZeroVector";
  case ErrorCode::NonFinite: return "NonFinite";
  case ErrorCode::NotPositiveSemidefinite: return "NotPositiveSemidefinite";
  case ErrorCode::DimensionMismatch: return "DimensionMismatch";
  case ErrorCode::NonPositiveUpdate: return "NonPositiveUpdate";
  case ErrorCode::NonPositiveDeterminant: return "NonPositiveDeterminant";
  case ErrorCode::Singular: return "Singular";
  case ErrorCode::NotSymmetric: return "NotSymmetric";
  case ErrorCode::EmptySequence: return "EmptySequence";
  case ErrorCode::OneClassOnly: return "OneClassOnly";
  case ErrorCode::EmptySample: return "EmptySample";
  case ErrorCode::LengthMismatch: return "LengthMismatch";
  case ErrorCode::HttpError: return "HttpError";
  case ErrorCode::MalformedResponse: return "MalformedResponse";
  case ErrorCode::EmptyCompletion: return "EmptyCompletion";
  case ErrorCode::DimensionInconsistent: return "DimensionInconsistent";
  case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
  case ErrorCode::MissingFixture: return "MissingFixture";
  case ErrorCode::MissingField: return "MissingField";
  case ErrorCode::InsufficientLabels: return "InsufficientLabels";
  case ErrorCode::ParseError: return "ParseError";
  case ErrorCode::DuplicateId: return "DuplicateId";
  case ErrorCode::IoError: return "IoError";
  case ErrorCode::ConfigError: return "ConfigError";
  case ErrorCode::MissingEmbeddings: return "MissingEmbeddings";
  case ErrorCode::EmptyInput: return "EmptyInput";
  }
  return "Unknown";
}

ErrorCategory category(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::ConfigError:
  case ErrorCode::InsufficientLabels:
    return ErrorCategory::Config;
  case ErrorCode::HttpError:
  case ErrorCode::MalformedResponse:
  case ErrorCode::EmptyCompletion:
  case ErrorCode::DimensionInconsistent:
  case ErrorCode::UnparseableVerdict:
  case ErrorCode::MissingFixture:
    return ErrorCategory::Remote;
  case ErrorCode::ParseError:
  case ErrorCode::DuplicateId:
  case ErrorCode::IoError:
  case ErrorCode::MissingField:
  case ErrorCode::MissingEmbeddings:
  case ErrorCode::EmptyInput:
    return ErrorCategory::Io;
  default:
    return ErrorCategory::Numerical;
  }
}

} // namespace semvol

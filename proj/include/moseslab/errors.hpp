#pragma once

#include <stdexcept>
#include <string>

namespace moseslab {

// Error codes mirror the failure modes of the public operations. The CLI maps
// UsageError to exit 1 and everything else to exit 2.
enum class ErrorCode {
  InvalidTask,
  InvalidConfig,
  SpaceTooLarge,
  ImmutableSpace,
  BadDims,
  DimMismatch,
  ShapeMismatch,
  VersionMismatch,
  CorruptStream,
  EmptyDataset,
  InvalidRatio,
  UnnormalizedThreshold,
  AdversaryDisabled,
  UnstableDecay,
  InfeasibleSplit,
  ZeroMean,
  InsufficientBatches,
  BudgetInfeasible,
  MissingReferenceStrategy,
  MismatchedRuns,
  EmptyRows,
  ParseError,
  MissingField,
  IoError,
  UsageError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidTask: return "invalid-task";
    case ErrorCode::InvalidConfig: return "invalid-config";
    case ErrorCode::SpaceTooLarge: return "space-too-large";
    case ErrorCode::ImmutableSpace: return "immutable-space";
    case ErrorCode::BadDims: return "bad-dims";
    case ErrorCode::DimMismatch: return "dim-mismatch";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::CorruptStream: return "corrupt-stream";
    case ErrorCode::EmptyDataset: return "empty-dataset";
    case ErrorCode::InvalidRatio: return "invalid-ratio";
    case ErrorCode::UnnormalizedThreshold: return "unnormalized-threshold";
    case ErrorCode::AdversaryDisabled: return "adversary-disabled";
    case ErrorCode::UnstableDecay: return "unstable-decay";
    case ErrorCode::InfeasibleSplit: return "infeasible-split";
    case ErrorCode::ZeroMean: return "zero-mean";
    case ErrorCode::InsufficientBatches: return "insufficient-batches";
    case ErrorCode::BudgetInfeasible: return "budget-infeasible";
    case ErrorCode::MissingReferenceStrategy: return "missing-reference-strategy";
    case ErrorCode::MismatchedRuns: return "mismatched-runs";
    case ErrorCode::EmptyRows: return "empty-rows";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::MissingField: return "missing-field";
    case ErrorCode::IoError: return "io-error";
    case ErrorCode::UsageError: return "usage-error";
  }
  return "unknown-error";
}

}  // namespace moseslab

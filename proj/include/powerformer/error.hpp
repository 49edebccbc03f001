#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace powerformer {

enum class ErrorCode {
  // grid ingestion
  MissingBlock,
  MalformedRow,
  DanglingReference,
  NoSlackBus,
  InvalidCase,
  // section config
  MalformedConfig,
  UnknownBranch,
  AmbiguousBranch,
  EmptySection,
  InvertedBounds,
  // solvers
  NonConvergence,
  SingularJacobian,
  SingularSystem,
  NotConverged,
  // tensors / training
  ShapeMismatch,
  NonScalarLoss,
  MissingGrad,
  EmptyBatch,
  AllMasked,
  MaskedAction,
  // scenarios / io
  ExhaustedAttempts,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingBlock: return "MissingBlock";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::NoSlackBus: return "NoSlackBus";
    case ErrorCode::InvalidCase: return "InvalidCase";
    case ErrorCode::MalformedConfig: return "MalformedConfig";
    case ErrorCode::UnknownBranch: return "UnknownBranch";
    case ErrorCode::AmbiguousBranch: return "AmbiguousBranch";
    case ErrorCode::EmptySection: return "EmptySection";
    case ErrorCode::InvertedBounds: return "InvertedBounds";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::MissingGrad: return "MissingGrad";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::MaskedAction: return "MaskedAction";
    case ErrorCode::ExhaustedAttempts: return "ExhaustedAttempts";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace powerformer

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maptree {

/// Every failure the library reports carries one of these codes. The CLI maps
/// them onto process exit codes (see exit_code()).
enum class ErrorCode {
  ParseError,
  ValidationError,
  IoError,
  EmptySourceSet,
  CountTooLarge,
  DegenerateAngle,
  SolverNoConvergence,
  KTooLarge,
  DimensionMismatch,
  NonSquare,
  SingularLeastSquares,
  ZeroConstantSum,
  GroupTooLarge,
  BasisExhausted,
  PreconditionViolated,
  MissingDistances,
  AllFacesDegenerate,
  EmptyCandidates,
  NonSymmetric,
  UnknownFlag,
  TypeError,
  InvalidArgument,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptySourceSet: return "EmptySourceSet";
    case ErrorCode::CountTooLarge: return "CountTooLarge";
    case ErrorCode::DegenerateAngle: return "DegenerateAngle";
    case ErrorCode::SolverNoConvergence: return "SolverNoConvergence";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonSquare: return "NonSquare";
    case ErrorCode::SingularLeastSquares: return "SingularLeastSquares";
    case ErrorCode::ZeroConstantSum: return "ZeroConstantSum";
    case ErrorCode::GroupTooLarge: return "GroupTooLarge";
    case ErrorCode::BasisExhausted: return "BasisExhausted";
    case ErrorCode::PreconditionViolated: return "PreconditionViolated";
    case ErrorCode::MissingDistances: return "MissingDistances";
    case ErrorCode::AllFacesDegenerate: return "AllFacesDegenerate";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::NonSymmetric: return "NonSymmetric";
    case ErrorCode::UnknownFlag: return "UnknownFlag";
    case ErrorCode::TypeError: return "TypeError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Exception type thrown by all maptree operations.
///
/// `where()` names the module and operation ("spectral/compute_basis"), and
/// the message names the offending input element when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string where, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + " in " + where + ": " + message),
        code_(code),
        where_(std::move(where)),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& where() const noexcept { return where_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string where_;
  std::string detail_;
};

/// Process exit code for an error class: 2 usage, 3 input files, 4 numerical,
/// 5 algorithmic preconditions.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownFlag:
    case ErrorCode::TypeError:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError:
    case ErrorCode::IoError:
      return 3;
    case ErrorCode::DegenerateAngle:
    case ErrorCode::SolverNoConvergence:
    case ErrorCode::SingularLeastSquares:
    case ErrorCode::ZeroConstantSum:
    case ErrorCode::AllFacesDegenerate:
      return 4;
    default:
      return 5;
  }
}

}  // namespace maptree

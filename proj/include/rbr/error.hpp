#pragma once

#include <stdexcept>
#include <string>

namespace rbr {

enum class ErrorCode {
  // configuration
  Config,
  InvalidArgument,
  // data
  Io,
  BadMagic,
  TruncatedFile,
  DimensionMismatch,
  NonFiniteValue,
  OutOfRange,
  InsufficientClassSamples,
  EmptyInput,
  NonPositiveGroundTruth,
  ShapeMismatch,
  LayoutMismatch,
  // numerical
  NotPositiveDefinite,
  NoConvergence,
  RankDeficient,
  ZeroNormAtom,
  ZeroNormQuery,
  NonFiniteLoss,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return "Config";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InsufficientClassSamples: return "InsufficientClassSamples";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NonPositiveGroundTruth: return "NonPositiveGroundTruth";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::ZeroNormAtom: return "ZeroNormAtom";
    case ErrorCode::ZeroNormQuery: return "ZeroNormQuery";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// command-line front end can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Process exit status: 2 config error, 3 data error, 4 numerical failure.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::NoConvergence:
    case ErrorCode::RankDeficient:
    case ErrorCode::ZeroNormAtom:
    case ErrorCode::ZeroNormQuery:
    case ErrorCode::NonFiniteLoss:
      return 4;
    default:
      return 3;
  }
}

}  // namespace rbr

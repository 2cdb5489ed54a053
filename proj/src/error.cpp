#include "finpred/error.hpp"

namespace finpred {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::UnknownAccount: return "UnknownAccount";
    case ErrorCode::NonMonotonePeriods: return "NonMonotonePeriods";
    case ErrorCode::EmptyStatement: return "EmptyStatement";
    case ErrorCode::MissingMacro: return "MissingMacro";
    case ErrorCode::EmptyResult: return "EmptyResult";
    case ErrorCode::MissingFeature: return "MissingFeature";
    case ErrorCode::DegenerateFeature: return "DegenerateFeature";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingBaseline: return "MissingBaseline";
    case ErrorCode::DegenerateStatistics: return "DegenerateStatistics";
    case ErrorCode::ZeroProbabilityEvidence: return "ZeroProbabilityEvidence";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::LatentEvidence: return "LatentEvidence";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace finpred

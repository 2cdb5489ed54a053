#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace finpred {

enum class ErrorCode {
  InvalidInput,
  UnknownAccount,
  NonMonotonePeriods,
  EmptyStatement,
  MissingMacro,
  EmptyResult,
  MissingFeature,
  DegenerateFeature,
  NotConverged,
  DimensionMismatch,
  DivergedLoss,
  InvalidK,
  LengthMismatch,
  MissingBaseline,
  DegenerateStatistics,
  ZeroProbabilityEvidence,
  TooLarge,
  LatentEvidence,
  UnknownNode,
  ParseError,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. Carries a machine-readable code and, where it
/// makes sense, the offending field names.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::vector<std::string> fields = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        fields_(std::move(fields)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  ErrorCode code_;
  std::vector<std::string> fields_;
};

}  // namespace finpred

#pragma once

#include <stdexcept>
#include <string>

namespace lld {

// Error categories exposed by the CLI as machine-readable identifiers.
enum class ErrorCategory {
  Usage,
  Config,
  Io,
  MissingContext,
  DegenerateGroup,
  AssumptionViolated,
  EmptySurvey,
  Validation,
  Internal,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return "usage";
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::MissingContext: return "missing_context";
    case ErrorCategory::DegenerateGroup: return "degenerate_group";
    case ErrorCategory::AssumptionViolated: return "assumption_violated";
    case ErrorCategory::EmptySurvey: return "empty_survey";
    case ErrorCategory::Validation: return "validation";
    case ErrorCategory::Internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& msg)
      : std::runtime_error(msg), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct MissingContextError : Error {
  explicit MissingContextError(const std::string& msg)
      : Error(ErrorCategory::MissingContext, msg) {}
};

struct DegenerateGroupError : Error {
  explicit DegenerateGroupError(const std::string& msg)
      : Error(ErrorCategory::DegenerateGroup, msg) {}
};

struct AssumptionViolatedError : Error {
  explicit AssumptionViolatedError(const std::string& msg)
      : Error(ErrorCategory::AssumptionViolated, msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg)
      : Error(ErrorCategory::Config, msg) {}
};

struct EmptySurveyError : Error {
  explicit EmptySurveyError(const std::string& msg)
      : Error(ErrorCategory::EmptySurvey, msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorCategory::Io, msg) {}
};

}  // namespace lld

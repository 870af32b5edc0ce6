#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace invuq {

enum class ErrorKind {
  InvalidInput,
  DegenerateSimilarity,
  UndefinedConditional,
  AssumptionViolation,
  PerturbationFailure,
  ProviderUnavailable,
  ProviderContract,
  Config,
  Unjudgeable,
  UndefinedMetric,
  UnstableMetric,
  IncompleteSeries,
  MissingArtifact,
  Internal,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::DegenerateSimilarity: return "degenerate-similarity";
    case ErrorKind::UndefinedConditional: return "undefined-conditional";
    case ErrorKind::AssumptionViolation: return "assumption-violation";
    case ErrorKind::PerturbationFailure: return "perturbation-failure";
    case ErrorKind::ProviderUnavailable: return "provider-unavailable";
    case ErrorKind::ProviderContract: return "provider-contract";
    case ErrorKind::Config: return "config";
    case ErrorKind::Unjudgeable: return "unjudgeable";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::UnstableMetric: return "unstable-metric";
    case ErrorKind::IncompleteSeries: return "incomplete-series";
    case ErrorKind::MissingArtifact: return "missing-artifact";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` lets callers dispatch
/// (the CLI maps kinds onto exit codes).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The text without the kind prefix, for rethrowing with more context.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

// Warnings go through a replaceable sink so tests can capture them.
using WarningSink = std::function<void(std::string_view)>;

namespace detail {
inline WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline void set_warning_sink(WarningSink sink) {
  std::lock_guard lock(detail::warning_mutex());
  detail::warning_sink() = std::move(sink);
}

inline void warn(std::string_view msg) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

}  // namespace invuq

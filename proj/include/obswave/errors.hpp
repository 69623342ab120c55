#pragma once

#include <stdexcept>
#include <string>

namespace obswave {

enum class ErrorKind {
    NonPositiveWeight,
    DegenerateMetric,
    EmptyGamma0,
    CflViolation,
    NonFiniteState,
    InvalidParameters,
    NoConvergence,
    IllPosedGeometry,
    DegenerateEnsemble,
    ConfigError,
    MissingArtifact,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::NonPositiveWeight: return "NonPositiveWeight";
    case ErrorKind::DegenerateMetric: return "DegenerateMetric";
    case ErrorKind::EmptyGamma0: return "EmptyGamma0";
    case ErrorKind::CflViolation: return "CflViolation";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::InvalidParameters: return "InvalidParameters";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::IllPosedGeometry: return "IllPosedGeometry";
    case ErrorKind::DegenerateEnsemble: return "DegenerateEnsemble";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::MissingArtifact: return "MissingArtifact";
    }
    return "Unknown";
}

/// All library failures are reported through this one exception type; the
/// kind tells callers (and the CLI exit path) what went wrong.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace obswave

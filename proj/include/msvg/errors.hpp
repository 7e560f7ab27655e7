#pragma once

#include <stdexcept>
#include <string>

namespace msvg {

// Invalid parameter values or mismatched dimensions (non-PD scale matrix,
// non-positive shape, wrong vector lengths, ...).
struct ParameterError : std::invalid_argument {
    explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed external input (CSV parse failures, inconsistent row widths).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// A starting point cannot be formed (degenerate data: zero spread, n too small).
struct InitializationError : std::runtime_error {
    explicit InitializationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A CM update is undefined at the current state (vanishing denominator,
// non-PD scale update, stalled root search).
struct DegenerateStepError : std::runtime_error {
    explicit DegenerateStepError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace msvg

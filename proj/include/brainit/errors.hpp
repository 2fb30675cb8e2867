#pragma once

#include <stdexcept>
#include <string>

namespace brainit {

struct ArgumentError : std::invalid_argument {
    explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A backend was asked for an operation it does not support
/// (e.g. training without real diffusion weights).
struct CapabilityError : std::runtime_error {
    explicit CapabilityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace brainit

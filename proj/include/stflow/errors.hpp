#pragma once

#include <stdexcept>
#include <string>

namespace stflow {

/// Point outside the chart or time outside the map's domain.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Degenerate or inconsistent geometric data (non-SPD metric, singular g, ...).
struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad call arguments (empty sample list, p < 2, ...).
struct ArgumentError : std::invalid_argument {
    explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Operation needs a capability the object does not provide
/// (e.g. stopping radius without an analytic distance).
struct CapabilityError : std::runtime_error {
    explicit CapabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Not enough data for the requested statistic.
struct StatisticsError : std::runtime_error {
    explicit StatisticsError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values produced during integration.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Config file / CLI usage problems.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace stflow

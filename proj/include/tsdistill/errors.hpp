#pragma once

#include <stdexcept>
#include <string>

namespace tsd {

struct ShapeError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

// Raised when a computation produced NaN/Inf or training diverged.
struct NumericError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

// A metric whose formula is undefined for the given inputs (e.g. MASE with H <= s).
struct UndefinedMetricError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

} // namespace tsd

#pragma once

#include <stdexcept>
#include <string>

namespace gctnet {

// Configuration problems: bad config file, unknown enum value, invalid
// network spec. Surfaced before any training step.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dataset problems: missing file, bad magic, truncated record stream.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or cache mismatches between tensors, parameters and layers.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numeric failures: gradient check above tolerance, non-finite loss.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDataError = 3;
inline constexpr int kExitNumericError = 4;

}  // namespace gctnet

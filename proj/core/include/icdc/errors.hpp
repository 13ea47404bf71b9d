#pragma once

#include <stdexcept>
#include <string>

namespace icdc {

// Shape/precondition violations on tensor operations.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Non-finite values produced by a numerical operation (NaN/Inf is an error state).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration or unusable input files.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed data records (parse errors carry line numbers).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace icdc

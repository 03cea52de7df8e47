#pragma once

#include <stdexcept>
#include <string>

namespace astromae {

// Error taxonomy maps onto CLI exit codes:
//   ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/contract violations inside the tensor library.
struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

// Non-scalar tensor where a scalar was required.
struct RankError : ConfigError {
    explicit RankError(const std::string& msg) : ConfigError(msg) {}
};

// Optimizer invoked without populated gradients.
struct OptimStateError : ConfigError {
    explicit OptimStateError(const std::string& msg) : ConfigError(msg) {}
};

// Degenerate inputs (zero-variance band, constant regression target).
struct DegenerateDataError : DataError {
    explicit DegenerateDataError(const std::string& msg) : DataError(msg) {}
};

// Binary container errors, one distinct type per failure mode.
struct FileMagicError : DataError {
    explicit FileMagicError(const std::string& msg) : DataError(msg) {}
};

struct FileVersionError : DataError {
    explicit FileVersionError(const std::string& msg) : DataError(msg) {}
};

struct FileTruncationError : DataError {
    explicit FileTruncationError(const std::string& msg) : DataError(msg) {}
};

}  // namespace astromae

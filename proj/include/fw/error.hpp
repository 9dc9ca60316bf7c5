#pragma once

#include <stdexcept>
#include <string>

namespace fw {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor rank/dimension mismatches.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration values (bad kernel size, unknown config key, ...).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed data: out-of-range labels, non-normalized distributions, bad files.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// File with wrong magic bytes.
struct BadMagicError : DataError {
    explicit BadMagicError(const std::string& msg) : DataError(msg) {}
};

// File shorter than its header promises.
struct TruncatedFileError : DataError {
    explicit TruncatedFileError(const std::string& msg) : DataError(msg) {}
};

// File with an unsupported format version.
struct VersionError : DataError {
    explicit VersionError(const std::string& msg) : DataError(msg) {}
};

// NaN/Inf where finite values are required.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Teacher/student or checkpoint state inconsistencies.
struct StateError : Error {
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// Invalid training setup (e.g. no labeled data).
struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

}  // namespace fw

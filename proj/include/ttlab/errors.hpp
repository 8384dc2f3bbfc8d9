#pragma once

#include <stdexcept>
#include <string>

namespace ttlab {

// Error hierarchy used across the library. Every throwing path uses one of
// these so callers (CLI, tests) can tell misuse from bad data from numerics.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/graph shape mismatch.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// API misuse: bad argument values, wrong call order.
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

// Malformed file contents (bad magic, truncation, record count).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// Filesystem-level failure; message names the file.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
};

// A numeric quantity left its valid domain (reported, not clamped).
struct NumericalDomainError : Error {
    explicit NumericalDomainError(const std::string& msg)
        : Error("numerical domain error: " + msg) {}
};

// Training diverged or a model fails an accuracy gate.
struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error("training error: " + msg) {}
};

}  // namespace ttlab

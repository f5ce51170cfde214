#pragma once

#include <stdexcept>
#include <string>

namespace rtdlab {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform for an op. Message names the op and both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// An op produced NaN/Inf from finite inputs, or a training step saw a
// non-finite loss. Treated as a training-abort condition.
struct NonFiniteError : Error {
    using Error::Error;
};

// Autograd misuse: non-scalar loss, backward twice, loss not on the tape.
struct TapeError : Error {
    using Error::Error;
};

// Bad configuration value or inconsistent config combination.
struct ConfigError : Error {
    using Error::Error;
};

// File I/O and container-format problems (bad magic, version, manifest).
struct IoError : Error {
    using Error::Error;
};

// Data-pipeline contract violations (empty corpus, batch too large, ...).
struct DataError : Error {
    using Error::Error;
};

}  // namespace rtdlab

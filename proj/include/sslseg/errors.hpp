#pragma once

#include <stdexcept>
#include <string>

namespace sslseg {

/// Malformed or truncated input data (bad magic, bad header, out-of-range label, ...).
/// The message names the offending file when one is involved.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure inside a fitting routine (non-PSD covariance, diverging loss, ...).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sslseg

#pragma once

#include <stdexcept>
#include <string>

namespace consense {

// Error taxonomy shared by the library and the CLI exit-code mapping.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor extents do not line up (matmul inner dims, concat extents, ...).
struct DimensionError : Error {
    using Error::Error;
};

// A knob is outside its legal range (dropout rate, batch size, ...).
struct ConfigError : Error {
    using Error::Error;
};

// The data itself is bad (label out of range, unseen class in a test set).
struct DataError : Error {
    using Error::Error;
};

// The API was called wrong (backward on a non-scalar, expand by zero).
struct UsageError : Error {
    using Error::Error;
};

// A training-protocol rule was violated (two trainable adapters at once,
// missing previous activation profile, incomplete metrics record).
struct ProtocolError : Error {
    using Error::Error;
};

// An on-disk artifact is malformed (truncated blob, inconsistent manifest).
struct FormatError : Error {
    using Error::Error;
};

}  // namespace consense

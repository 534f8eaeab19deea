#pragma once

#include <stdexcept>
#include <string>

namespace bitkit {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shapes do not line up (conv wiring, matmul inner dims, ...).
struct DimensionError : Error {
    using Error::Error;
};

// A forward op produced NaN/Inf from finite inputs.
struct NumericError : Error {
    using Error::Error;
};

// Caller-supplied values violate an op precondition.
struct ValidationError : Error {
    using Error::Error;
};

// Model/optimizer configuration is inconsistent (channels vs groups, ...).
struct ConfigError : Error {
    using Error::Error;
};

// File container is malformed; carries the byte offset of the problem.
struct FormatError : Error {
    FormatError(const std::string& what, size_t offset)
        : Error(what + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    size_t byte_offset;
};

// Optimizer/training state is missing or inconsistent.
struct StateError : Error {
    using Error::Error;
};

// API misuse (non-scalar loss to backward, k > C, ...).
struct UsageError : Error {
    using Error::Error;
};

// A class is too small for the requested subsample.
struct SamplingError : Error {
    using Error::Error;
};

// Aggregation over an empty group.
struct AggregationError : Error {
    using Error::Error;
};

}  // namespace bitkit

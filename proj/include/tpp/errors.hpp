#pragma once

#include <stdexcept>
#include <string>

namespace tpp {

// Error taxonomy shared by all modules. Everything derives from Error so
// callers can catch the library as one family.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/rank mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Input value outside the mathematical domain of an operation.
struct DomainError : Error {
    using Error::Error;
};

// API misuse: stale graph reuse, non-scalar backward seed, mismatched
// optimizer state.
struct ContractError : Error {
    using Error::Error;
};

// Invalid model/training configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or truncated file; message carries the byte offset.
struct FormatError : Error {
    using Error::Error;
};

// Data violates a documented invariant (non-unit normal, N=0, bad row sums).
struct ValidationError : Error {
    using Error::Error;
};

// Point partition cannot be formed.
struct PartitionError : Error {
    using Error::Error;
};

// Ranks disagree at a collective boundary.
struct CollectiveError : Error {
    using Error::Error;
};

}  // namespace tpp

#pragma once

#include <stdexcept>
#include <string>

namespace harmony {

// All library failures derive from Error so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// A documented precondition of an operation was violated.
struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct SequenceError : Error {
    using Error::Error;
};

struct VocabularyError : Error {
    using Error::Error;
};

struct SpecError : Error {
    using Error::Error;
};

// On-disk payload does not match its manifest.
struct IntegrityError : Error {
    using Error::Error;
};

// Checkpoint parameter registry differs from the model it is loaded into.
struct ShapeMismatchError : Error {
    using Error::Error;
};

struct NonFiniteLossError : Error {
    using Error::Error;
};

}  // namespace harmony

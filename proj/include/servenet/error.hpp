#pragma once

#include <stdexcept>
#include <string>

namespace servenet {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape/dimension disagreement between tensors or layer parameters.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid scalar argument (rate out of range, nonpositive fan, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

// Out-of-range index (token id, class index, ...).
class IndexError : public Error {
public:
    using Error::Error;
};

// Dataset-level problem (empty input, singleton category under stratified split, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed input file content; message carries the line number.
class ParseError : public Error {
public:
    using Error::Error;
};

// File cannot be opened/read/written.
class IoError : public Error {
public:
    using Error::Error;
};

// Checkpoint has wrong magic bytes or an unsupported version.
class FormatError : public Error {
public:
    using Error::Error;
};

// Checkpoint is structurally valid but incomplete or inconsistent.
class CorruptionError : public Error {
public:
    using Error::Error;
};

// Operation called with stale or missing cached state.
class StateError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss; message names epoch and batch.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace servenet

#pragma once

#include <stdexcept>
#include <string>

namespace droughtcast {

/// Base of every error raised by the toolkit. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate an operation's preconditions.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Input data problems: malformed files, empty data, I/O failures.
class DataError : public Error {
public:
    using Error::Error;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class CorruptionError : public DataError {
public:
    using DataError::DataError;
};

class UnsupportedVersionError : public DataError {
public:
    using DataError::DataError;
};

class EmptyDataError : public DataError {
public:
    using DataError::DataError;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace droughtcast

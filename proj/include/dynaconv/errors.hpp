#pragma once

#include <stdexcept>
#include <string>

namespace dynaconv {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand extents disagree (shape mismatch, channel mismatch, bad axes).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An attribute option or layer configuration is not permitted.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An operation was invoked in a state that cannot service it.
class StateError : public Error {
public:
    using Error::Error;
};

/// A value went non-finite where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data. `kind` is a short machine-readable tag.
class FormatError : public Error {
public:
    FormatError(std::string kind, const std::string& what)
        : Error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// Invalid parameter to a data generator or transform.
class ParameterError : public Error {
public:
    using Error::Error;
};

}  // namespace dynaconv

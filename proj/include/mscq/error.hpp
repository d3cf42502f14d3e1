#pragma once

#include <stdexcept>
#include <string>

namespace mscq {

// Error classes map one-to-one onto CLI exit codes (see tools/mscq.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// A value does not fit the exponent or bit field it must be stored in.
class RangeError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Corrupt or inconsistent serialized data. `check()` names the failed invariant
/// ("perm-integrity", "identifier-consistency", ...).
class FormatError : public Error {
public:
    FormatError(std::string check, const std::string& what)
        : Error(check + ": " + what), check_(std::move(check)) {}
    const std::string& check() const noexcept { return check_; }

private:
    std::string check_;
};

}  // namespace mscq

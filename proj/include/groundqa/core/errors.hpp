#pragma once

#include <stdexcept>
#include <string>

namespace groundqa {

// Base class for every error the library raises on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration values (bad dimensions, ranges, names).
struct ConfigError : Error {
    using Error::Error;
};

// Matrix operands whose shapes do not line up for the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values or other numeric breakdown detected at runtime.
struct NumericError : Error {
    using Error::Error;
};

// Inputs that are structurally valid but unusable (empty sequence, zero clips).
struct DegenerateInputError : Error {
    using Error::Error;
};

// API used out of order (backward before forward, read past end, etc).
struct StateError : Error {
    using Error::Error;
};

} // namespace groundqa

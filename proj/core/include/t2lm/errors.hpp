#pragma once

#include <stdexcept>
#include <string>

namespace t2lm {

// Base for every error the library raises on bad input. The CLI maps these
// to exit code 1; anything else escaping is an internal error (exit 2).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values, out-of-range indices, violated preconditions.
struct ValueError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace t2lm

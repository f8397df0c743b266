#pragma once

#include <stdexcept>
#include <string>

namespace cil {

// Invalid shapes, arguments or configuration. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed dataset / checkpoint / config text. Maps to CLI exit code 1.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input for which a quantity is undefined (zero-norm vector, all-zero distribution).
class DegenerateInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss or parameter during training. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cil

#pragma once

#include <stdexcept>
#include <string>

namespace mhd {

// Shapes, architectures or settings that cannot work together.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed call arguments (labels out of range, non-probability rows, ...).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical check could not be evaluated (non-finite loss, ...).
class VerificationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mhd

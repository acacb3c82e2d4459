#pragma once

#include <stdexcept>

namespace crackseg {

/// Bad user input: malformed dataset layout, unreadable file, invalid flag value.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File carries the wrong magic/version or is structurally corrupt.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace crackseg

#pragma once

#include <stdexcept>
#include <string>

namespace darb {

// Base for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input failed a format or invariant check (bad file, bad record, bad config).
// The CLI maps this to exit code 1; any other Error maps to 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace darb

#pragma once

#include <stdexcept>
#include <string>

namespace handrawer {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Precondition or invariant violation on caller-supplied input.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed record; field() names the offending field.
class ParseError : public Error {
public:
    ParseError(std::string field, const std::string& message)
        : Error("parse error in field '" + field + "': " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Checksum or config-hash mismatch in a persisted container.
class IntegrityError : public Error {
public:
    using Error::Error;
};

}  // namespace handrawer

#pragma once

#include <stdexcept>

namespace astrack {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data or configuration; the CLI maps these to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed action-sequence text. Rollout consumers catch these and drop
/// the offending rollout instead of failing the whole prediction.
class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

} // namespace astrack

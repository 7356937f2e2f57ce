#pragma once

#include <stdexcept>
#include <string>

namespace vmt {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shape or layout mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration, dataset, or argument values.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Remote client (recaptioner) failure; carries the retry count.
class ClientError : public Error {
public:
    ClientError(const std::string& msg, int retries)
        : Error(msg + " (retries: " + std::to_string(retries) + ")"), retries_(retries) {}
    int retries() const { return retries_; }

private:
    int retries_ = 0;
};

}  // namespace vmt

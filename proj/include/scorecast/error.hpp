#pragma once

#include <stdexcept>
#include <string>

namespace scorecast {

// Failure categories map one-to-one onto CLI exit codes.
enum class ErrorKind { data = 1, usage = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Bad input data, IO failures, malformed files.
struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Invalid arguments, configuration, or dimension contracts.
struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

// Non-finite values, divergence, singular systems.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

} // namespace scorecast

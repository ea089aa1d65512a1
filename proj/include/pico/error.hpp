#pragma once

#include <stdexcept>
#include <string>

namespace pico {

/// Pipeline stage an error originated from. Maps onto CLI exit codes.
enum class ErrorKind {
    invalid_argument,
    config,
    parse,
    backend,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error invalid_argument(const std::string& message)
{
    return Error(ErrorKind::invalid_argument, message);
}

inline const char* to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::invalid_argument: return "argument";
    case ErrorKind::config: return "config";
    case ErrorKind::parse: return "parser";
    case ErrorKind::backend: return "backend";
    case ErrorKind::io: return "io";
    }
    return "unknown";
}

} // namespace pico

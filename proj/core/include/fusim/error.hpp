#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fusim {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Argument outside its documented domain (bad unit id, empty batch, NaN gradient...).
class ValueError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration text. `line()` is 1-based, 0 when not tied to a line.
class ConfigError : public Error {
public:
    ConfigError(std::size_t line, const std::string& message)
        : Error(line == 0 ? message : "line " + std::to_string(line) + ": " + message),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace fusim

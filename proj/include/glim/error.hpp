#pragma once

#include <stdexcept>
#include <string>

namespace glim {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand sizes disagree (block length, channel shape, stream length).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed textual input. Row and column are 1-based; 0 means "not applicable".
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what), row_(row), column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

// A linear system that must be inverted is (numerically) singular.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Channel or geometry that cannot carry a signal (zero column, coincident points).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid simulation or command-line configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace glim

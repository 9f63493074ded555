#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace can {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, config values, or layer arithmetic.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or JSON input. `offset` is the byte position where
// decoding failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class VersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace can

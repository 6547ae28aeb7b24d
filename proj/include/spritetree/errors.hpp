#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spritetree {

// Base for every error raised by the library. Callers that only care about
// "something in the pipeline failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Frame dimensions are odd, zero, or do not agree between two frames.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. `offset()` is the byte position at which the
// reader gave up (or the line number for text formats, see `what()`).
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t offset)
      : Error(msg + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A data structure handed to an operation breaks one of its invariants.
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Model, dataset and state disagree on the feature layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Bad user-facing configuration; reported before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Environment misuse (e.g. stepping a finished episode).
class EnvError : public Error {
 public:
  using Error::Error;
};

}  // namespace spritetree

#pragma once

#include <stdexcept>
#include <string>

namespace pitchrl {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad dimension, non-positive dt, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Data does not have the shape an operation requires (wrong transition count,
/// mask/trajectory length mismatch, missing fields).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A numerical fault: non-finite command, gradient or loss.
class NumericalFault : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { kVersion, kDigest, kTruncated, kFormat, kIo };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace pitchrl

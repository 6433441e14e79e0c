#pragma once

#include <stdexcept>
#include <string>

namespace replan {

// Base of every error the library throws. `kind()` is a short stable token
// used by the command-line tool for its machine-parsable error line.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

class ParameterError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "parameter"; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical"; }
};

class ArchiveError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "archive"; }
};

class VersionError : public ArchiveError {
 public:
  using ArchiveError::ArchiveError;
  const char* kind() const noexcept override { return "version"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

}  // namespace replan

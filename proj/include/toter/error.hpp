#pragma once

#include <stdexcept>
#include <string>

namespace toter {

/// Failure category, mapped onto process exit codes by the CLI.
enum class ErrorKind { usage = 1, input = 2, runtime = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Malformed or inconsistent input data (files, ids, dimensions).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

/// Numerical or procedural failure while running (e.g. training divergence).
class RuntimeFailure : public Error {
 public:
  explicit RuntimeFailure(const std::string& what) : Error(ErrorKind::runtime, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

}  // namespace toter

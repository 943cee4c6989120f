#pragma once

#include <stdexcept>
#include <string>

namespace mdfm {

// Exit/status codes shared by the C API and the CLI.
enum class ErrorKind : int {
  usage = 1,
  numerical = 2,
  data = 3,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

// Factorization failures, non-SPD posteriors, non-convergence.
class NumericalError : public Error {
public:
  explicit NumericalError(const std::string &what)
      : Error(ErrorKind::numerical, what) {}
};

// Malformed or inconsistent input data.
class DataError : public Error {
public:
  explicit DataError(const std::string &what) : Error(ErrorKind::data, what) {}
};

// Invalid configuration, dimension mismatch, bad arguments.
class UsageError : public Error {
public:
  explicit UsageError(const std::string &what)
      : Error(ErrorKind::usage, what) {}
};

} // namespace mdfm

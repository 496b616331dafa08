#pragma once

#include <stdexcept>
#include <string>

namespace treecpd {

// Failure classes. The CLI maps each class to its own exit code.
enum class ErrorKind { ingestion, configuration, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Malformed or non-finite input data.
class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& what)
      : Error(ErrorKind::ingestion, what) {}
};

// Invalid parameters, preconditions, or unsupported requests.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::configuration, what) {}
};

// A computation that cannot produce a trustworthy number.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::numerical, what) {}
};

}  // namespace treecpd

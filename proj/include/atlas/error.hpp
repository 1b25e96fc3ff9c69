#pragma once

#include <stdexcept>
#include <string>

namespace atlas {

// Base for every error the library raises. CLI maps ValidationError to
// exit code 1 and everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input or violated precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Binary/text artifact does not match its declared format.
class FormatError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

// Failure talking to a remote service. `status` is the HTTP status, or 0 for
// transport failures (connect refused, timeout).
class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status, bool retryable)
      : Error(what), status_(status), retryable_(retryable) {}

  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

}  // namespace atlas

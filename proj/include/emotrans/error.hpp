#pragma once

#include <stdexcept>
#include <string>

namespace emotrans {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (unknown model id, bad template).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, missing or inconsistent input artifacts.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A remote call failed after exhausting its retry budget.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int status)
      : Error(what), status_(status) {}
  /// Last HTTP status seen, or 0 when no response was received.
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace emotrans

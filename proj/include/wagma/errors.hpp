#pragma once

#include <stdexcept>
#include <string>

namespace wagma {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameters violate a documented precondition (power-of-two sizes, ranges).
class InvalidParams : public Error {
 public:
  using Error::Error;
};

/// A collective or baseline protocol observed a message or call it cannot
/// reconcile. Never swallowed.
class ProtocolFault : public Error {
 public:
  using Error::Error;
};

class VersionRegression : public ProtocolFault {
 public:
  using ProtocolFault::ProtocolFault;
};

class TimeTravelError : public Error {
 public:
  using Error::Error;
};

class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

/// Non-finite gradient or loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace wagma

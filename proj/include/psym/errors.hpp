#pragma once

#include <stdexcept>
#include <string>

namespace psym {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, shape mismatch or bad argument. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Missing, malformed or insufficient data. CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

/// A metric is undefined for the given input (e.g. AUC with one class).
class UndefinedMetricError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite value during training or inference. CLI exit code 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong state (e.g. backward without forward).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace psym

#pragma once

#include <stdexcept>
#include <string>

namespace devlang {

// Error categories map one-to-one onto CLI exit codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when the stopping point selection phase cannot finish for every
// development language; the epoch average would be undefined.
class PhaseOneAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace devlang

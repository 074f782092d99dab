#pragma once

#include <stdexcept>
#include <string>

namespace sguard {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid hyperparameter, spec, or config document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition (shapes, pairing, counts).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Timestep outside the schedule.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Prompt token not present in a model's vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, gradient, or ill-conditioned statistic.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed image/checkpoint/data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Statistics requested on a degenerate input (e.g. single-element channel).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace sguard

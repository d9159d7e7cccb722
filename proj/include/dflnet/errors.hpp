#pragma once

#include <stdexcept>
#include <string>

namespace dflnet {

// All library failures derive from Error. The CLI maps the "input" family
// (bad files, bad configs, bad arguments) to exit code 1 and everything else
// to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside an op's mathematical domain (log of non-positive, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autograd API, e.g. backward on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

// Inconsistent architecture or checkpoint/spec disagreement.
class SpecError : public InputError {
 public:
  using InputError::InputError;
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

class LengthError : public InputError {
 public:
  using InputError::InputError;
};

// Non-finite values during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dflnet

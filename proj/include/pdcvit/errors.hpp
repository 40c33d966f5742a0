#pragma once

#include <stdexcept>
#include <string>

namespace pdcvit {

// Root of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not compose (matmul inner dims, kernel larger than input...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range hyperparameter (dropout p >= 1, lr <= 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Class label outside [0, C).
class IndexError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition that is not about shapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Undecodable/undersized image, empty class directory, malformed files.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace pdcvit

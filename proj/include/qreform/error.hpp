#pragma once

#include <stdexcept>
#include <string>

namespace qreform {

/// Base of every error thrown by the library. The CLI maps the subclasses to
/// exit codes: UsageError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contract violation by the caller: bad shapes, bad ids, invalid options.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input files (logs, checkpoints, configs).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace qreform

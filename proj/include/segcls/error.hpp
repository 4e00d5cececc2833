#pragma once

#include <stdexcept>
#include <string>

namespace segcls {

// Each error category maps onto one CLI exit code.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kNumeric = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kUsage; }
};

/// Bad arguments, unknown names, malformed specs.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A model spec whose shapes do not propagate.
class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Unreadable or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kData; }
};

/// Non-finite losses or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumeric; }
};

}  // namespace segcls

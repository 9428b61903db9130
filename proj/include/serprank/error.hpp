#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace serprank {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad operator input: flags, configs, missing files. Maps to CLI exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Bad data or an impossible computation on data. Maps to CLI exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

class MalformedRow : public DataError {
 public:
  MalformedRow(std::size_t line_no, const std::string& reason)
      : DataError("line " + std::to_string(line_no) + ": " + reason),
        line_no_(line_no),
        reason_(reason) {}

  std::size_t line_no() const noexcept { return line_no_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_no_;
  std::string reason_;
};

class MissingHeader : public DataError {
 public:
  using DataError::DataError;
};

class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

class EmptySplit : public DataError {
 public:
  using DataError::DataError;
};

class InfeasibleConfig : public UsageError {
 public:
  using UsageError::UsageError;
};

class OutOfRange : public DataError {
 public:
  using DataError::DataError;
};

class UnknownItem : public DataError {
 public:
  using DataError::DataError;
};

class EmptyTrainingSet : public DataError {
 public:
  using DataError::DataError;
};

class DimensionMismatch : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientData : public DataError {
 public:
  using DataError::DataError;
};

class NoValidationData : public DataError {
 public:
  using DataError::DataError;
};

class UntrainedEnsemble : public DataError {
 public:
  using DataError::DataError;
};

class UnknownQuery : public DataError {
 public:
  using DataError::DataError;
};

class NotAPermutation : public DataError {
 public:
  using DataError::DataError;
};

class EmptyList : public DataError {
 public:
  using DataError::DataError;
};

/// Model file was produced under a different feature layout.
class ChecksumMismatch : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public UsageError {
 public:
  ConfigError(const std::string& key, const std::string& reason)
      : UsageError("config key '" + key + "': " + reason), key_(key), reason_(reason) {}

  const std::string& key() const noexcept { return key_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string key_;
  std::string reason_;
};

}  // namespace serprank

#pragma once

#include <stdexcept>
#include <string>

namespace pam {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ExitCode::kFailure, what) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error(ExitCode::kFailure, what) {}
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ExitCode::kFailure, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// Checkpoint container failures. All of them are data errors for the CLI.
class CheckpointError : public DataError {
 public:
  enum class Kind { kIo, kCorrupt, kVersion, kFingerprint, kShape };

  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace pam

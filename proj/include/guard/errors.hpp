#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace guard {

enum class ErrorKind {
  kInvalidPrefix,
  kInvalidSequence,
  kInvalidModel,
  kEnumerationTooLarge,
  kDeadEnd,
  kEmptyGoldSupport,
  kConstraintViolatingDistribution,
  kDrawBudgetExhausted,
  kDegenerateDataset,
  kTrainingDiverged,
  kInvalidInput,
  kConfig,
  kIo,
};

/// Base class for every error raised by the library. The kind lets callers
/// (notably the CLI) map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : Error(ErrorKind::kConfig,
              line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  /// 1-based line in the config file, 0 when the error is not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace guard

#pragma once

#include <stdexcept>
#include <string>

namespace grafuse {

// Error categories map onto CLI exit codes: config 1, data 2, numeric 3.
enum class ErrorKind {
  kConfig = 1,
  kData = 2,
  kNumeric = 3,
  kContract = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorKind::kContract, "dimension error: " + what) {}
};

/// Value outside an operation's mathematical domain (log of non-positive, zero mean, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ErrorKind::kNumeric, "domain error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, "config error: " + what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ErrorKind::kData, "data error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::kNumeric, "numeric failure: " + what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ErrorKind::kContract, "contract violation: " + what) {}
};

/// Softmax row with no admissible entry.
class DegenerateRowError : public Error {
 public:
  DegenerateRowError(std::size_t row, const std::string& where)
      : Error(ErrorKind::kNumeric,
              "degenerate row " + std::to_string(row) + " in " + where),
        row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

}  // namespace grafuse

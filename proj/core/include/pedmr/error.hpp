#pragma once

#include <stdexcept>
#include <string>

namespace pedmr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (pedigree, CSV, config).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but violates a structural or referential rule.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A column has zero variance where a standardized column is required.
class DegenerateColumnError : public ValidationError {
 public:
  explicit DegenerateColumnError(std::string column)
      : ValidationError("degenerate column (zero variance): " + column),
        column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class NotPositiveDefiniteError : public Error {
 public:
  using Error::Error;
};

/// Iterative numerical procedure failed to converge.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// No SNP passed instrument selection.
class EmptySelectionError : public Error {
 public:
  using Error::Error;
};

class AdaptationError : public Error {
 public:
  using Error::Error;
};

}  // namespace pedmr

#pragma once

#include <stdexcept>
#include <string>

namespace hte {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (CSV cell, config value). Carries the location.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long row = -1, long column = -1)
      : Error(what), row_(row), column_(column) {}
  long row() const { return row_; }
  long column() const { return column_; }

 private:
  long row_;
  long column_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double gradient_norm)
      : Error(what), gradient_norm_(gradient_norm) {}
  double gradient_norm() const { return gradient_norm_; }

 private:
  double gradient_norm_;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

// Probability mass <= 0 or a non-finite likelihood term.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace hte

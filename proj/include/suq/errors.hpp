#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace suq {

// Maps onto CLI exit codes: 2 configuration, 3 numerical, 4 data.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solver failed to reach its tolerance; keeps the residual history.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : NumericalError(what), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input; the message carries the line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace suq

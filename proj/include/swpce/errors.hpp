#pragma once

#include <stdexcept>
#include <string>

namespace swpce {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// CSV / config parse failure; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line = 0)
      : Error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Thrown when a dataset violates its structural invariants.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

/// Root finding did not reach tolerance; carries the last iterate.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& msg, double last_x, double last_residual)
      : Error(msg + " (last x = " + std::to_string(last_x) +
              ", |f| = " + std::to_string(last_residual) + ")"),
        last_x_(last_x),
        last_residual_(last_residual) {}
  double last_x() const { return last_x_; }
  double last_residual() const { return last_residual_; }

 private:
  double last_x_;
  double last_residual_;
};

/// Requested stratum carries (numerically) no probability mass.
class DegenerateStratumError : public Error {
 public:
  explicit DegenerateStratumError(const std::string& msg) : Error(msg) {}
};

/// Calibration cannot proceed (e.g. too few transition pairs); carries the set size.
class EstimationError : public Error {
 public:
  EstimationError(const std::string& msg, int set_size)
      : Error(msg), set_size_(set_size) {}
  int set_size() const { return set_size_; }

 private:
  int set_size_;
};

/// Complete or quasi-complete separation in a logistic fit.
class SeparationError : public Error {
 public:
  explicit SeparationError(const std::string& msg) : Error(msg) {}
};

/// Rank-deficient design matrix.
class RankError : public Error {
 public:
  explicit RankError(const std::string& msg) : Error(msg) {}
};

}  // namespace swpce

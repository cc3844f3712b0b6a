#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lsm {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf input, or a value outside an operation's numeric domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Bad argument that is neither a shape nor a numeric-domain problem.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Matrix lacks the column rank an operation needs.
class RankError : public Error {
 public:
  RankError(const std::string& what, double singular_value)
      : Error(what), singular_value_(singular_value) {}

  /// The offending (smallest relevant) singular value or eigenvalue.
  double singular_value() const noexcept { return singular_value_; }

 private:
  double singular_value_;
};

/// A direction handed to the exponential map is not horizontal.
class TangencyError : public Error {
 public:
  TangencyError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Operation requires a reference bank in a different learning mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

/// Gradient of a similarity is undefined at the given point.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset or model file. Carries the file and 1-based line.
class FormatError : public Error {
 public:
  FormatError(const std::string& file, std::size_t line, const std::string& msg)
      : Error(file + ":" + std::to_string(line) + ": " + msg),
        file_(file),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, std::size_t batch)
      : Error(what), epoch_(epoch), batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

}  // namespace lsm

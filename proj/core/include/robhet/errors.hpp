#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace robhet {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates an operation's documented precondition (sample too small,
// bad tuning constant, mismatched sizes, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// The residuals carry no scale information: all (or at least a 1-b fraction)
// of them are exactly zero, so the M-scale equation has no positive root.
class DegenerateScaleError : public Error {
 public:
  using Error::Error;
};

// An iterative solver could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// lambda' h(x, beta) exceeded the exp() guard.
class OverflowError : public Error {
 public:
  OverflowError(const std::string& what, std::optional<std::size_t> observation)
      : Error(what), observation_(observation) {}

  std::optional<std::size_t> observation() const noexcept { return observation_; }

 private:
  std::optional<std::size_t> observation_;
};

// Malformed dataset or configuration text. `line` is 1-based when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace robhet

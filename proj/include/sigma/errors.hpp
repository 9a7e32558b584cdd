#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sigma {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid structural configuration (even kernel, bad factor, bad enum...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. Δ <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-negative continuous state matrix entry; the recurrence would not decay.
class StabilityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input or intermediate value.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t index = -1)
      : Error(what), index_(index) {}

  /// Flat index of the first offending element, or -1 when not applicable.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

/// Malformed file content.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace sigma

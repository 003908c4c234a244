#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace iscope {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameter layout or tensor shape disagrees with what a model expects.
class ShapeError : public Error {
 public:
  ShapeError(std::string layer, const std::string& what)
      : Error("shape mismatch in '" + layer + "': " + what), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

/// A loss or metric evaluated to a non-finite value.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::int64_t iteration = -1)
      : Error(iteration >= 0 ? what + " (iteration " + std::to_string(iteration) + ")" : what),
        message_(what),
        iteration_(iteration) {}
  std::int64_t iteration() const noexcept { return iteration_; }
  /// The message without the iteration suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::int64_t iteration_;
};

/// Malformed binary or text input. Carries the byte offset (or line) of the fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A referenced checkpoint or file does not exist.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

/// Precondition violation on an argument (bad range, empty input, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace iscope

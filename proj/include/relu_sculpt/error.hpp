#pragma once

#include <stdexcept>
#include <string>

namespace relu_sculpt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimensional inconsistency between a layer and the tensor it receives.
class ShapeError : public Error {
 public:
  ShapeError(std::size_t layer_index, const std::string& what)
      : Error("layer " + std::to_string(layer_index) + ": " + what), layer_index_(layer_index) {}
  ShapeError(const std::string& location, std::size_t layer_index, const std::string& what)
      : Error(location + ": layer " + std::to_string(layer_index) + ": " + what), layer_index_(layer_index) {}
  explicit ShapeError(const std::string& what)
      : Error(what), layer_index_(static_cast<std::size_t>(-1)) {}

  std::size_t layer_index() const noexcept { return layer_index_; }

 private:
  std::size_t layer_index_;
};

/// Malformed bytes or documents: bad magic, truncated payloads, parse errors.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A serialized object whose redundant fields disagree (e.g. the L0 trailer).
class IntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A caller violated an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration keys / values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Exhaustive enumeration would exceed its configured cap.
class EnumerationCapError : public Error {
 public:
  using Error::Error;
};

}  // namespace relu_sculpt

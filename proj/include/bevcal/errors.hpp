#pragma once

#include <stdexcept>
#include <string>

namespace bevcal {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A quaternion with (near-)zero norm cannot represent a rotation.
class InvalidRotationError : public Error {
 public:
  explicit InvalidRotationError(const std::string& msg) : Error(msg) {}
};

/// Configuration file failed to parse or validate. Carries the field path.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// A file is missing or cannot be opened.
class MissingFileError : public Error {
 public:
  explicit MissingFileError(const std::string& msg) : Error(msg) {}
};

/// A file exists but its contents violate the expected format.
class MalformedFileError : public Error {
 public:
  explicit MalformedFileError(const std::string& msg) : Error(msg) {}
};

/// A point cloud ended up empty after loading or range filtering.
class EmptySceneError : public Error {
 public:
  explicit EmptySceneError(const std::string& msg) : Error(msg) {}
};

/// The geometry-guided selector found no in-grid positions.
class EmptySelectionError : public Error {
 public:
  explicit EmptySelectionError(const std::string& msg) : Error(msg) {}
};

/// A loss or parameter went non-finite during optimization.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

}  // namespace bevcal

#pragma once

#include <stdexcept>
#include <string>

namespace slim {

// Failure categories. The CLI maps each to a distinct exit code.

/// Shape mismatches, bad config values, unknown keys.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input data: out-of-range token ids, bad labels, ragged files.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Unreadable or unwritable files and directories.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// A forward pass produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace slim

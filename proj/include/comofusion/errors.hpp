#pragma once

#include <stdexcept>
#include <string>

namespace comofusion {

/// Precondition or contract violation on caller-supplied data.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// File system or codec failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace comofusion

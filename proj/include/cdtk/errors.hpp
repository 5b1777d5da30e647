// Error taxonomy shared by the whole toolkit. The CLI maps these onto
// exit codes: ValidationError (and subtypes) -> 1, IoError -> 2.
#pragma once

#include <stdexcept>
#include <string>

namespace cdtk {

// Content is semantically wrong: bad dimensions, duplicate ids, value
// domain violations, mismatched shapes.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file does not follow its declared layout (bad magic, bad header fields).
class FormatError : public ValidationError {
 public:
  explicit FormatError(const std::string& msg) : ValidationError(msg) {}
};

// A file follows the layout but its payload is damaged (truncation,
// non-finite values where finite ones are required).
class CorruptionError : public ValidationError {
 public:
  explicit CorruptionError(const std::string& msg) : ValidationError(msg) {}
};

// The operating system refused to read or write.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cdtk

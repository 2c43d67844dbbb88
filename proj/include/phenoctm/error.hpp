#pragma once
// Exception hierarchy shared by every module. The CLI maps each category
// onto a distinct process exit code.

#include <stdexcept>
#include <string>

namespace phenoctm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or violated precondition supplied by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries a line number (JSONL) or byte offset (JSON)
// when one is known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t location = 0)
      : Error(what), location_(location) {}
  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Model and data disagree about vocabularies or format version.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace phenoctm

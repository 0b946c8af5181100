#pragma once

#include <stdexcept>
#include <string>

namespace dsur {

// Base of every exception thrown by the library. The CLI maps the concrete
// subclasses onto its exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class DecompositionError : public Error {
public:
  DecompositionError(const std::string& what, std::size_t pivot)
      : Error(what), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

private:
  std::size_t pivot_;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

class UsageError : public Error {
public:
  using Error::Error;
};

// Malformed or version-mismatched files.
class FormatError : public Error {
public:
  using Error::Error;
};

}  // namespace dsur

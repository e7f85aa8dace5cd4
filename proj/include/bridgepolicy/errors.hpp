#pragma once

#include <stdexcept>
#include <string>

namespace bridgepolicy {

// Argument outside the mathematical domain of an operation (time ordering,
// out-of-range indices, shape mismatches).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid or inconsistent run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computed quantity violated a numerical guarantee (non-finite values,
// negative variances beyond round-off).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt, truncated or version-mismatched file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bridgepolicy

#pragma once

#include <stdexcept>
#include <string>

namespace tar2 {

// Error categories surfaced by the library. All derive from std::runtime_error
// so callers that do not care about the category can catch one type.

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConstraintError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or schema-mismatched input files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tar2

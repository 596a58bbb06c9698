#pragma once

#include <stdexcept>
#include <string>

namespace iterdpo {

// CLI exit codes: 0 success, 2 config, 3 integrity, 4 not found,
// 1 anything else.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments to an operation (empty dataset, missing prompt piece, ...).
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sequence does not fit the model's context window.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Required prior state is missing (e.g. retrospective context without a
// parent).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed instruction handed to the answer oracle.
struct QueryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Policy / reference architecture mismatch.
struct CompatibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Content hash mismatch on a persisted artifact.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Referenced artifact does not exist.
struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace iterdpo

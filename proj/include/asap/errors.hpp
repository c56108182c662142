#pragma once

#include <stdexcept>

namespace asap {

// Invalid tensor dimensions or incompatible operand shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad caller-supplied values (ids out of range, empty vectors, zero rows).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values or files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Manifest / JSON document does not match the expected schema.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric is undefined for the given inputs (e.g. single-class AUC).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unrecoverable training state (non-finite loss, corrupt checkpoint).
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace asap

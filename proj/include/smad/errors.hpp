// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace smad {

// Error taxonomy maps onto CLI exit codes: usage/config -> 1, data -> 2,
// numerical -> 3.

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Model wiring / hyperparameter problems (invalid variant combination,
// indivisible head count, odd positional dimension, ...).
struct ConfigError : UsageError {
  using UsageError::UsageError;
};

// Tensor shape disagreements. A subclass of usage errors: the caller built an
// inconsistent graph.
struct ShapeError : UsageError {
  using UsageError::UsageError;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace smad

#pragma once

#include <stdexcept>
#include <string>

namespace enkl {

// Linear-solver or divergence failures (non-SPD covariance, non-finite state).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape violations between ensembles, layouts, and datasets.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Config parsing/validation failures; message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File format / filesystem failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace enkl

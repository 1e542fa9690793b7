#pragma once

#include <stdexcept>
#include <string>

namespace tdisc {

/// Invalid or inconsistent configuration (exit code 1 at the CLI).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss, failed gradient check and similar (exit code 2 at the CLI).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace tdisc

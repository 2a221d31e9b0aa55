#pragma once

#include <stdexcept>
#include <string>

namespace eclock {

// Invalid parameters or configuration. The CLI maps this to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A Bayesian update whose record has (numerically) zero likelihood under the
// current posterior.
class DegenerateUpdateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No completed trials to aggregate.
class EmptyReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A run stopped through its cancellation flag.
class CancelledError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eclock

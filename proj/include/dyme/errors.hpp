#pragma once

#include <stdexcept>
#include <string>

namespace dyme {

/// Raised when an operation receives arguments outside its domain
/// (out-of-range token ids, empty groups, malformed files).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A trace template that is missing a segment or lists one twice.
class InvalidTemplate : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Experiment configuration rejected at load time.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite loss or gradient was produced. Carries the step at which
/// it happened so the harness can report it.
class NanAbort : public std::runtime_error {
 public:
  NanAbort(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace dyme

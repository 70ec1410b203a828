#pragma once

#include <stdexcept>
#include <string>

namespace fixnorm {

/// Base class for all library errors.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad key, bad value, violated cross-field rule).
class config_error : public error {
 public:
  using error::error;
};

/// Tensor shape or dimension mismatch.
class shape_error : public error {
 public:
  using error::error;
};

/// Malformed binary or text input (bad magic, truncated payload, ...).
class format_error : public error {
 public:
  using error::error;
};

/// Degenerate numeric state: zero-norm weights, single-element batch, ...
class degenerate_error : public error {
 public:
  using error::error;
};

/// Non-finite loss or gradient during training. Carries the step index.
class divergence_error : public error {
 public:
  divergence_error(const std::string& what, long step)
      : error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// API misuse: an operation called in a state that forbids it.
class state_error : public error {
 public:
  using error::error;
};

/// Filesystem failure, annotated with the offending path.
class io_error : public error {
 public:
  io_error(const std::string& what, const std::string& path)
      : error(what + ": " + path) {}
};

}  // namespace fixnorm

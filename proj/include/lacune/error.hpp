#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lacune {

enum class ErrorCode {
  missing_file,
  io,
  parse,
  shape_mismatch,
  non_binary,
  non_finite,
  degenerate_input,
  out_of_range,
  invalid_argument,
  empty_input,
  registration_failed,
  training_diverged,
  config,
};

std::string_view to_string(ErrorCode code);

/// Error raised by every lacune operation. `stage` is filled in by the
/// pipeline and CLI when an error crosses a stage boundary.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& message() const noexcept { return message_; }

  Error with_stage(std::string stage) const;

 private:
  ErrorCode code_;
  std::string message_;
  std::string stage_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace lacune

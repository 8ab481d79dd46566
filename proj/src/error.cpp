#include "lacune/error.hpp"

namespace lacune {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_file: return "missing-file";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::non_binary: return "non-binary";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::degenerate_input: return "degenerate-input";
    case ErrorCode::out_of_range: return "out-of-range";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::empty_input: return "empty-input";
    case ErrorCode::registration_failed: return "registration-failed";
    case ErrorCode::training_diverged: return "training-diverged";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      message_(message) {}

Error Error::with_stage(std::string stage) const {
  Error e(code_, "[" + stage + "] " + message_);
  e.stage_ = std::move(stage);
  return e;
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace lacune

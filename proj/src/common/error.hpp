#pragma once

#include <stdexcept>
#include <string>

namespace infusion {

// Mirrors the status codes of the C API (see include/infusion/infusion.h).
enum class ErrorCode : int {
  invalid_argument = 1,
  shape = 2,
  non_finite = 3,
  config = 4,
  io = 5,
  format = 6,
  checksum = 7,
  version = 8,
  missing_artifact = 9,
  empty = 10,
  numeric = 11,
  unsupported = 12,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

const char* error_code_name(ErrorCode code) noexcept;

}  // namespace infusion

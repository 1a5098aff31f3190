#pragma once

#include <stdexcept>
#include <string>

namespace pshield {

// Codes double as CLI exit statuses.
enum class ErrorCode : int {
  Ok = 0,
  Internal = 1,
  Infeasible = 2,
  Validation = 3,
  Certification = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace pshield

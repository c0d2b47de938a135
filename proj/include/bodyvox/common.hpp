#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>

namespace bodyvox {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class ErrorCode {
  invalid_argument,
  degenerate_input,
  dim_mismatch,
  malformed_header,
  malformed_payload,
  run_overflow,
  truncated_payload,
  io,
  unbalanced,
  non_finite,
};

const char* to_string(ErrorCode code);

// Every recoverable failure in the library is reported with this type; the
// code lets callers (and the CLI exit-code mapping) distinguish causes.
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

}  // namespace bodyvox

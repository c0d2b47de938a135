#include "bodyvox/common.hpp"

namespace bodyvox {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::degenerate_input: return "degenerate input";
    case ErrorCode::dim_mismatch: return "dimension mismatch";
    case ErrorCode::malformed_header: return "malformed header";
    case ErrorCode::malformed_payload: return "malformed payload";
    case ErrorCode::run_overflow: return "run overflow";
    case ErrorCode::truncated_payload: return "truncated payload";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::unbalanced: return "cannot balance";
    case ErrorCode::non_finite: return "non-finite value";
  }
  return "unknown";
}

}  // namespace bodyvox

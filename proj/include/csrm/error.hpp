#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace csrm {

// Closed set of failure categories. The service maps these onto HTTP
// statuses and the CLI onto exit codes, so adding one means touching both.
enum class ErrorCode {
  invalid_argument,
  out_of_range,
  structural,
  empty_input,
  not_found,
  conflict,
  unauthorized,
  forbidden,
  incomplete_round,
  consensus_not_reached,
  session_finalized,
  deadlocked,
  unsupported_format,
  schema,
  storage,
  internal,
};

inline constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::structural: return "structural";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::unauthorized: return "unauthorized";
    case ErrorCode::forbidden: return "forbidden";
    case ErrorCode::incomplete_round: return "incomplete_round";
    case ErrorCode::consensus_not_reached: return "consensus_not_reached";
    case ErrorCode::session_finalized: return "session_finalized";
    case ErrorCode::deadlocked: return "deadlocked";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::schema: return "schema";
    case ErrorCode::storage: return "storage";
    case ErrorCode::internal: return "internal";
  }
  return "unknown";
}

inline constexpr ErrorCode all_error_codes[] = {
    ErrorCode::invalid_argument,      ErrorCode::out_of_range,
    ErrorCode::structural,            ErrorCode::empty_input,
    ErrorCode::not_found,             ErrorCode::conflict,
    ErrorCode::unauthorized,          ErrorCode::forbidden,
    ErrorCode::incomplete_round,      ErrorCode::consensus_not_reached,
    ErrorCode::session_finalized,     ErrorCode::deadlocked,
    ErrorCode::unsupported_format,    ErrorCode::schema,
    ErrorCode::storage,               ErrorCode::internal,
};

/// Every failure raised by the library. `details` carries field-level
/// diagnostics (offending ids, cells, participants) in a stable order.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::vector<std::string> details = {})
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  std::vector<std::string> details_;
};

}  // namespace csrm

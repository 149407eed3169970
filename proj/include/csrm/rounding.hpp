#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include "csrm/error.hpp"

namespace csrm {

// full: values at working precision, aggregates from full-precision values.
// paper_compat: every displayed value rounded to 2 decimals (half-up) and
// displayed aggregates summed from the rounded values.
enum class RoundingMode { full, paper_compat };

inline constexpr std::string_view to_string(RoundingMode m) noexcept {
  return m == RoundingMode::full ? "full" : "paper-compat";
}

inline RoundingMode parse_rounding_mode(std::string_view s) {
  if (s == "full") return RoundingMode::full;
  if (s == "paper-compat" || s == "paper_compat") return RoundingMode::paper_compat;
  throw Error(ErrorCode::invalid_argument, "unknown rounding mode '" + std::string(s) + "'");
}

/// Half-up rounding on the decimal value the double was written as. The
/// scaled value is first snapped to 1e-9 so that 0.105 (stored as
/// 0.10499999999999999) rounds to 0.11 like its decimal spelling.
inline double round_half_up(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  double scaled = x * scale;
  scaled = std::round(scaled * 1e9) / 1e9;
  double r = std::copysign(std::floor(std::abs(scaled) + 0.5), scaled);
  return r / scale;
}

inline std::string format_fixed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  std::string s(buf);
  if (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

/// Up to ten significant digits, trailing zeros dropped.
inline std::string format_full(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

/// Shortest decimal string that reads back to the identical double.
inline std::string format_exact(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Value as it is displayed under `mode`.
inline double displayed(double x, RoundingMode mode) {
  return mode == RoundingMode::paper_compat ? round_half_up(x, 2) : x;
}

inline std::string format_value(double x, RoundingMode mode) {
  return mode == RoundingMode::paper_compat ? format_fixed(round_half_up(x, 2), 2)
                                            : format_full(x);
}

/// Aggregate of displayed values: sum of the rounded values in paper-compat
/// mode (re-rounded to strip binary noise), plain sum in full mode.
inline double displayed_sum(std::span<const double> values, RoundingMode mode) {
  double sum = 0.0;
  for (double v : values) sum += displayed(v, mode);
  return mode == RoundingMode::paper_compat ? round_half_up(sum, 2) : sum;
}

}  // namespace csrm

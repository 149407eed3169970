#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "csrm/error.hpp"

namespace csrm::csv {

struct Row {
  std::size_t line = 0;  // 1-based line in the source text
  std::vector<std::string> cells;
};

inline std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

/// Comma-separated rows with optional double-quoted fields. Blank lines
/// and lines starting with '#' are skipped; cells are whitespace-trimmed.
inline std::vector<Row> parse(std::string_view text) {
  std::vector<Row> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                           : eol - pos);
    ++line_no;
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;

    Row row;
    row.line = line_no;
    std::string cell;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cell += c;
        }
      } else if (c == '"') {
        if (!was_quoted) cell = trim(cell);
        quoted = true;
        was_quoted = true;
      } else if (c == ',') {
        row.cells.push_back(was_quoted ? cell : trim(cell));
        cell.clear();
        was_quoted = false;
      } else if (!(was_quoted && (c == ' ' || c == '\t' || c == '\r'))) {
        cell += c;
      }
    }
    if (quoted) {
      throw Error(ErrorCode::schema, "line " + std::to_string(line_no) + ": unterminated quote");
    }
    row.cells.push_back(was_quoted ? cell : trim(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string escape(std::string_view cell) {
  if (cell.find_first_of(",\"\n") == std::string_view::npos) return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += escape(cells[i]);
  }
  return out;
}

/// Strict decimal parse of the whole cell.
inline std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace csrm::csv

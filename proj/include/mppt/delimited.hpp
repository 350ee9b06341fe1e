#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mppt {

struct DelimitedRecord {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

// RFC 4180 style: a field that starts with `quote` may contain the delimiter,
// newlines and doubled quotes. quote == '\0' disables quoting entirely.
std::vector<DelimitedRecord> parse_delimited(std::string_view content, char delimiter, char quote = '"');

// Terminated by a newline. Quotes a field only when it contains the delimiter, the quote or a line break.
std::string format_delimited_row(const std::vector<std::string>& fields, char delimiter, char quote = '"');

}  // namespace mppt

#include "mppt/delimited.hpp"

namespace mppt {

std::vector<DelimitedRecord> parse_delimited(std::string_view content, char delimiter, char quote) {
  std::vector<DelimitedRecord> records;
  // UTF-8 byte order mark
  if (content.size() >= 3 && content.substr(0, 3) == "\xEF\xBB\xBF") content.remove_prefix(3);

  std::size_t line = 1;
  std::size_t i = 0;
  const std::size_t n = content.size();
  while (i < n) {
    DelimitedRecord record;
    record.line = line;
    std::string field;
    bool record_done = false;
    while (!record_done) {
      field.clear();
      if (quote != '\0' && i < n && content[i] == quote) {
        ++i;
        while (i < n) {
          const char c = content[i];
          if (c == quote) {
            if (i + 1 < n && content[i + 1] == quote) {
              field.push_back(quote);
              i += 2;
              continue;
            }
            ++i;
            break;
          }
          if (c == '\n') ++line;
          field.push_back(c);
          ++i;
        }
        // Anything between the closing quote and the delimiter is kept verbatim.
        while (i < n && content[i] != delimiter && content[i] != '\n' && content[i] != '\r') {
          field.push_back(content[i++]);
        }
      } else {
        while (i < n && content[i] != delimiter && content[i] != '\n' && content[i] != '\r') {
          field.push_back(content[i++]);
        }
      }
      record.fields.push_back(field);
      if (i < n && content[i] == delimiter) {
        ++i;
        continue;
      }
      if (i < n && content[i] == '\r') ++i;
      if (i < n && content[i] == '\n') {
        ++i;
        ++line;
      }
      record_done = true;
    }
    const bool blank = record.fields.size() == 1 && record.fields[0].empty();
    if (!blank) records.push_back(std::move(record));
  }
  return records;
}

std::string format_delimited_row(const std::vector<std::string>& fields, char delimiter, char quote) {
  std::string out;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    if (f > 0) out.push_back(delimiter);
    const std::string& value = fields[f];
    const bool needs_quote = quote != '\0' && (value.find(delimiter) != std::string::npos ||
                                               value.find(quote) != std::string::npos ||
                                               value.find('\n') != std::string::npos ||
                                               value.find('\r') != std::string::npos);
    if (!needs_quote) {
      out += value;
      continue;
    }
    out.push_back(quote);
    for (char c : value) {
      if (c == quote) out.push_back(quote);
      out.push_back(c);
    }
    out.push_back(quote);
  }
  out.push_back('\n');
  return out;
}

}  // namespace mppt

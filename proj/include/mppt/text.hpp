#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Unicode helpers. Invalid UTF-8 is never an error: malformed sequences are
// replaced by U+FFFD before any further processing.
namespace mppt::text {

std::string nfc(std::string_view s);

// Runs of Unicode whitespace become one ASCII space; ends trimmed.
std::string collapse_whitespace(std::string_view s);

// NFC + whitespace collapse. The only normalization applied at ingestion.
std::string normalize(std::string_view s);

// Case-folded, normalized key used for duplicate detection and topic sharing.
std::string fold_key(std::string_view s);

std::string to_lower(std::string_view s);

std::string trim(std::string_view s);

std::size_t codepoint_count(std::string_view s);

std::vector<char32_t> decode_utf8(std::string_view s);
std::string encode_utf8(const std::vector<char32_t>& cps);
void append_utf8(std::string& out, char32_t cp);

bool is_whitespace(char32_t cp);
bool is_control(char32_t cp);
bool is_punctuation(char32_t cp);
bool is_cjk(char32_t cp);

// Lower-case, NFD, drop combining marks (the uncased BERT convention).
std::string lower_strip_accents(std::string_view s);

}  // namespace mppt::text

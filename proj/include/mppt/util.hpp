#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mppt {

std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the destination, so readers
// see either the old or the new content, never a torn write.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string utc_timestamp();

}  // namespace mppt

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mppt/llm_backend.hpp"

namespace mppt::tscot {

struct CacheRecord {
  std::string key;
  std::string model_id;
  Sampling sampling;
  std::string instruction;
  std::string response;
  std::string created_at;

  nlohmann::json to_json() const;
  static CacheRecord from_json(const nlohmann::json& j);
};

// SHA-256 over a canonical JSON encoding of the three inputs.
std::string cache_key(std::string_view model_id, const Sampling& sampling, std::string_view instruction);

// One JSON file per record at <root>/<key[0:2]>/<key>.json. Writes go through
// write-to-temp + rename, so concurrent writers of one key are safe.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root);

  std::optional<CacheRecord> find(const std::string& key) const;
  void store(const CacheRecord& record) const;
  std::filesystem::path record_path(const std::string& key) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

}  // namespace mppt::tscot

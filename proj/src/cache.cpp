#include "mppt/cache.hpp"

#include <spdlog/spdlog.h>

#include "mppt/common.hpp"
#include "mppt/util.hpp"

namespace mppt::tscot {

using nlohmann::json;

json CacheRecord::to_json() const {
  return {{"key", key},
          {"model_id", model_id},
          {"sampling", {{"temperature", sampling.temperature}, {"max_output_tokens", sampling.max_output_tokens}}},
          {"instruction", instruction},
          {"response", response},
          {"created_at", created_at}};
}

CacheRecord CacheRecord::from_json(const json& j) {
  CacheRecord r;
  r.key = j.at("key").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.sampling.temperature = j.at("sampling").at("temperature").get<double>();
  r.sampling.max_output_tokens = j.at("sampling").at("max_output_tokens").get<int>();
  r.instruction = j.at("instruction").get<std::string>();
  r.response = j.at("response").get<std::string>();
  r.created_at = j.value("created_at", "");
  return r;
}

std::string cache_key(std::string_view model_id, const Sampling& sampling, std::string_view instruction) {
  // json objects serialize with sorted keys, so the encoding is canonical.
  const json canonical = {{"instruction", std::string(instruction)},
                          {"max_output_tokens", sampling.max_output_tokens},
                          {"model_id", std::string(model_id)},
                          {"temperature", sampling.temperature}};
  return sha256_hex(canonical.dump(-1, ' ', false, json::error_handler_t::replace));
}

ResponseCache::ResponseCache(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

std::filesystem::path ResponseCache::record_path(const std::string& key) const {
  return root_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CacheRecord> ResponseCache::find(const std::string& key) const {
  const auto path = record_path(key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    auto record = CacheRecord::from_json(json::parse(read_file(path)));
    if (record.key != key) {
      spdlog::warn("cache record {} carries key {}; ignoring it", path.string(), record.key);
      return std::nullopt;
    }
    return record;
  } catch (const json::exception& e) {
    spdlog::warn("unreadable cache record {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

void ResponseCache::store(const CacheRecord& record) const {
  write_file_atomic(record_path(record.key),
                    record.to_json().dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

}  // namespace mppt::tscot

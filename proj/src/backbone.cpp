#include "mppt/backbone.hpp"

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "mppt/common.hpp"
#include "mppt/safetensors.hpp"
#include "mppt/util.hpp"

namespace mppt {

using nlohmann::json;

Backbone load_backbone(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::InvalidConfig, "backbone directory " + dir.string() + " does not exist");
  json config_json;
  try {
    config_json = json::parse(read_file(dir / "config.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, (dir / "config.json").string() + ": " + e.what());
  }
  EncoderConfig config = EncoderConfig::from_json(config_json);

  bool lowercase = true;
  if (std::filesystem::exists(dir / "tokenizer_config.json")) {
    const json tc = json::parse(read_file(dir / "tokenizer_config.json"));
    lowercase = tc.value("do_lower_case", true);
  }
  WordPieceTokenizer tokenizer = WordPieceTokenizer::load(dir / "vocab.txt", lowercase);
  if (static_cast<int>(tokenizer.size()) > config.vocab_size) {
    throw Error(ErrorCode::InvalidConfig, "vocab.txt is larger than the configured vocab_size");
  }

  auto weights = EncoderWeights<float>::zeros(config);
  const auto missing = import_weights(read_safetensors(dir / "model.safetensors"), weights);
  if (!missing.empty()) {
    spdlog::warn("backbone {} has no masked-LM head ({} tensors); head left at zero", dir.string(), missing.size());
  }
  return Backbone{dir.filename().string(), std::move(config), std::move(weights), std::move(tokenizer)};
}

void save_backbone(const std::filesystem::path& dir, const Backbone& backbone) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.json", backbone.config.to_json().dump(2) + "\n");
  write_file_atomic(dir / "tokenizer_config.json", json{{"do_lower_case", backbone.tokenizer.lowercase()}}.dump(2) + "\n");
  backbone.tokenizer.save(dir / "vocab.txt");
  write_safetensors(dir / "model.safetensors", export_weights(backbone.weights), {{"format", "pt"}});
}

std::string backbone_hash(const std::filesystem::path& dir) { return sha256_hex(read_file(dir / "model.safetensors")); }

}  // namespace mppt

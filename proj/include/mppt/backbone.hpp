#pragma once

#include <filesystem>
#include <string>

#include "mppt/encoder.hpp"
#include "mppt/tokenizer.hpp"

namespace mppt {

// A masked-LM backbone directory in the common layout: config.json,
// vocab.txt and model.safetensors (optionally tokenizer_config.json for
// do_lower_case).
struct Backbone {
  std::string identity;  // directory name or caller-supplied id
  EncoderConfig config;
  EncoderWeights<float> weights;
  WordPieceTokenizer tokenizer;
};

Backbone load_backbone(const std::filesystem::path& dir);
void save_backbone(const std::filesystem::path& dir, const Backbone& backbone);

// SHA-256 over the weight file, used for provenance records.
std::string backbone_hash(const std::filesystem::path& dir);

}  // namespace mppt

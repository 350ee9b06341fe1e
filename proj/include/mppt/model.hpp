#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mppt/backbone.hpp"
#include "mppt/encoder.hpp"
#include "mppt/prompt.hpp"
#include "mppt/stance_head.hpp"
#include "mppt/verbalizer.hpp"

namespace mppt::multipln {

struct ModelOptions {
  int max_seq_len = 128;
  HeadOptions head;
  bool freeze_label_embeddings = false;

  nlohmann::json to_json() const;
  static ModelOptions from_json(const nlohmann::json& j);
};

struct MaskVectorSet {
  std::string example_id;
  Mat<float> vectors;  // gamma x d
};

struct Prediction {
  std::string example_id;
  std::array<double, kNumLabels> yhat{};
  StanceLabel label = StanceLabel::None;
  std::vector<double> alpha;
  std::vector<double> delta;
};

struct ModelGrads {
  EncoderWeights<float> encoder;
  Mat<float> h;
};

// A named parameter with its gradient slot; decay marks AdamW weight decay.
struct ParamRef {
  std::string name;
  Mat<float>* value;
  Mat<float>* grad;
  bool decay;
};

class StanceModel {
 public:
  StanceModel(Backbone backbone, verbalizer::Verbalizer verbalizer, verbalizer::MaterializedVerbalizer units, Mat<float> h,
              std::uint64_t h_seed, ModelOptions options);

  // Materializes the verbalizer and draws h ~ N(0, initializer_range^2)
  // from the "h-init" stream of seed.
  static StanceModel initialize(Backbone backbone, const verbalizer::Verbalizer& verbalizer, const ModelOptions& options,
                                std::uint64_t seed);

  MaskVectorSet encode_mask_vectors(std::span<const PromptInstance> instances, DropoutContext dropout = {},
                                    std::vector<EncoderCache<float>>* caches = nullptr) const;
  Prediction predict(std::span<const PromptInstance> instances) const;

  // Adds scale * d loss / d params into grads and returns the unscaled loss.
  double accumulate_gradients(std::span<const PromptInstance> instances, StanceLabel y, DropoutContext dropout, float scale,
                              ModelGrads& grads) const;

  ModelGrads zero_grads() const;
  std::vector<ParamRef> parameters(ModelGrads& grads);
  // Token ids whose embedding rows hold label words.
  std::vector<int> label_token_ids() const;

  const Encoder<float>& encoder() const { return encoder_; }
  Encoder<float>& encoder() { return encoder_; }
  const WordPieceTokenizer& tokenizer() const { return tokenizer_; }
  const verbalizer::Verbalizer& verbalizer() const { return verbalizer_; }
  const verbalizer::MaterializedVerbalizer& units() const { return units_; }
  const Mat<float>& query() const { return h_; }
  Mat<float>& query() { return h_; }
  std::uint64_t query_seed() const { return h_seed_; }
  const ModelOptions& options() const { return options_; }
  const std::string& backbone_identity() const { return identity_; }
  int hidden_size() const { return encoder_.config().hidden_size; }
  double dropout_probability() const { return encoder_.config().hidden_dropout; }

  // Directory layout: backbone/ (config.json, vocab.txt, model.safetensors),
  // query.safetensors, verbalizer.json, model.json.
  void save(const std::filesystem::path& dir) const;
  static StanceModel load(const std::filesystem::path& dir);

 private:
  std::string identity_;
  Encoder<float> encoder_;
  WordPieceTokenizer tokenizer_;
  verbalizer::Verbalizer verbalizer_;
  verbalizer::MaterializedVerbalizer units_;
  Mat<float> h_;
  std::uint64_t h_seed_;
  ModelOptions options_;
};

}  // namespace mppt::multipln

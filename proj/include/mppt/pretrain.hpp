#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mppt/backbone.hpp"

namespace mppt {

struct PretrainOptions {
  EncoderConfig arch;  // vocab_size is replaced by the built vocabulary's size
  std::size_t vocab_limit = 2000;
  int steps = 600;
  int batch_size = 32;
  double lr = 1e-3;
  int warmup = 50;
  double mask_prob = 0.15;
  int max_seq_len = 128;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string identity = "compact-mlm";
};

struct PretrainResult {
  Backbone backbone;
  std::vector<double> losses;  // mean masked-token loss per step
};

// Masked-LM pretraining from scratch: 80/10/10 replacement of the selected
// tokens, linear warmup then linear decay, AdamW.
PretrainResult pretrain_mlm(const std::vector<std::string>& corpus, const std::vector<std::string>& required_words,
                            const PretrainOptions& options);

}  // namespace mppt

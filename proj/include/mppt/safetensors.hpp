#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mppt/encoder.hpp"

namespace mppt {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;  // row-major
};

using TensorMap = std::map<std::string, Tensor>;

// F32, F16 and BF16 tensors are read (the latter two widened to float);
// writing always uses F32.
TensorMap read_safetensors(const std::filesystem::path& path);
void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata = {});

// Canonical names with "bert." prefixes; Linear weights are transposed to
// the (out x in) layout used by checkpoints.
template <typename T>
TensorMap export_weights(const EncoderWeights<T>& weights);

// Accepts names with or without the "bert." prefix and the legacy
// gamma/beta LayerNorm aliases. Missing masked-LM head tensors are left
// at their current values and reported in the return value; any other
// missing tensor or shape mismatch throws.
template <typename T>
std::vector<std::string> import_weights(const TensorMap& tensors, EncoderWeights<T>& weights);

}  // namespace mppt

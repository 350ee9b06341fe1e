#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mppt/model.hpp"

namespace mppt {

struct AdamWOptions {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
};

// Decoupled weight decay Adam. Moments are created lazily per parameter name.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  // Clips the global gradient norm, applies one update and returns the
  // pre-clipping norm.
  double step(const std::vector<multipln::ParamRef>& params);

  std::int64_t steps() const { return step_; }
  const AdamWOptions& options() const { return options_; }
  AdamWOptions& options() { return options_; }

  void save(const std::filesystem::path& dir) const;  // optimizer.safetensors + optimizer.json
  void load(const std::filesystem::path& dir);

 private:
  AdamWOptions options_;
  std::int64_t step_ = 0;
  std::map<std::string, Mat<float>> m_;
  std::map<std::string, Mat<float>> v_;
};

}  // namespace mppt

#pragma once

#include <Eigen/Dense>
#include "json.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mppt/random.hpp"

namespace mppt {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Architecture hyper-parameters, serialized with the key names used by BERT
// checkpoints' config.json so that an exported backbone directory can be
// read by other tooling and vice versa.
struct EncoderConfig {
  int vocab_size = 0;
  int hidden_size = 768;
  int num_layers = 12;
  int num_heads = 12;
  int intermediate_size = 3072;
  int max_position_embeddings = 512;
  int type_vocab_size = 2;
  double layer_norm_eps = 1e-12;
  double initializer_range = 0.02;
  double hidden_dropout = 0.1;

  int head_dim() const { return hidden_size / num_heads; }
  std::int64_t parameter_count() const;
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

enum class ParamKind { Embedding, Linear, Bias, Norm };

// Linear weights are stored (in x out) so a layer is x * W + b.
template <typename T>
struct LayerWeights {
  Mat<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Mat<T> ln1_g, ln1_b;
  Mat<T> ff1_w, ff1_b, ff2_w, ff2_b;
  Mat<T> ln2_g, ln2_b;
};

template <typename T>
struct EncoderWeights {
  Mat<T> word_emb, pos_emb, type_emb, emb_ln_g, emb_ln_b;
  std::vector<LayerWeights<T>> layers;
  // Masked-LM prediction head; the decoder is tied to word_emb.
  Mat<T> mlm_w, mlm_b, mlm_ln_g, mlm_ln_b, mlm_bias;

  static EncoderWeights zeros(const EncoderConfig& config);
  static EncoderWeights random(const EncoderConfig& config, Rng& rng);

  // Visits every parameter with its canonical checkpoint name.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  template <typename U>
  EncoderWeights<U> cast() const;

  void set_zero();

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& w, F& f) {
    f("bert.embeddings.word_embeddings.weight", w.word_emb, ParamKind::Embedding);
    f("bert.embeddings.position_embeddings.weight", w.pos_emb, ParamKind::Embedding);
    f("bert.embeddings.token_type_embeddings.weight", w.type_emb, ParamKind::Embedding);
    f("bert.embeddings.LayerNorm.weight", w.emb_ln_g, ParamKind::Norm);
    f("bert.embeddings.LayerNorm.bias", w.emb_ln_b, ParamKind::Norm);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
      auto& l = w.layers[i];
      const std::string p = "bert.encoder.layer." + std::to_string(i) + ".";
      f(p + "attention.self.query.weight", l.q_w, ParamKind::Linear);
      f(p + "attention.self.query.bias", l.q_b, ParamKind::Bias);
      f(p + "attention.self.key.weight", l.k_w, ParamKind::Linear);
      f(p + "attention.self.key.bias", l.k_b, ParamKind::Bias);
      f(p + "attention.self.value.weight", l.v_w, ParamKind::Linear);
      f(p + "attention.self.value.bias", l.v_b, ParamKind::Bias);
      f(p + "attention.output.dense.weight", l.o_w, ParamKind::Linear);
      f(p + "attention.output.dense.bias", l.o_b, ParamKind::Bias);
      f(p + "attention.output.LayerNorm.weight", l.ln1_g, ParamKind::Norm);
      f(p + "attention.output.LayerNorm.bias", l.ln1_b, ParamKind::Norm);
      f(p + "intermediate.dense.weight", l.ff1_w, ParamKind::Linear);
      f(p + "intermediate.dense.bias", l.ff1_b, ParamKind::Bias);
      f(p + "output.dense.weight", l.ff2_w, ParamKind::Linear);
      f(p + "output.dense.bias", l.ff2_b, ParamKind::Bias);
      f(p + "output.LayerNorm.weight", l.ln2_g, ParamKind::Norm);
      f(p + "output.LayerNorm.bias", l.ln2_b, ParamKind::Norm);
    }
    f("cls.predictions.transform.dense.weight", w.mlm_w, ParamKind::Linear);
    f("cls.predictions.transform.dense.bias", w.mlm_b, ParamKind::Bias);
    f("cls.predictions.transform.LayerNorm.weight", w.mlm_ln_g, ParamKind::Norm);
    f("cls.predictions.transform.LayerNorm.bias", w.mlm_ln_b, ParamKind::Norm);
    f("cls.predictions.bias", w.mlm_bias, ParamKind::Bias);
  }
};

template <typename T>
template <typename U>
EncoderWeights<U> EncoderWeights<T>::cast() const {
  EncoderWeights<U> out;
  out.layers.resize(layers.size());
  std::vector<const Mat<T>*> src;
  visit([&](const std::string&, const Mat<T>& m, ParamKind) { src.push_back(&m); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Mat<U>& m, ParamKind) { m = src[i++]->template cast<U>(); });
  return out;
}

// Per-forward state retained for backward.
template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  ColVec<T> inv_std;
};

template <typename T>
struct LayerCache {
  Mat<T> x, q, k, v, ctx;
  std::vector<Mat<T>> probs;
  Mat<T> attn_mask;  // dropout scale per element, empty when inactive
  LayerNormCache<T> ln1;
  Mat<T> h1, ff_pre, ff_act;
  Mat<T> ff_mask;
  LayerNormCache<T> ln2;
};

template <typename T>
struct EncoderCache {
  std::vector<int> ids;
  LayerNormCache<T> emb_ln;
  Mat<T> emb_mask;
  std::vector<LayerCache<T>> layers;
};

template <typename T>
struct MlmCache {
  Mat<T> x, pre, act;
  LayerNormCache<T> ln;
};

// Dropout is active only when rng is non-null and p > 0.
struct DropoutContext {
  Rng* rng = nullptr;
  double p = 0.0;
  bool active() const { return rng != nullptr && p > 0.0; }
};

template <typename T>
class Encoder {
 public:
  Encoder(EncoderConfig config, EncoderWeights<T> weights);

  const EncoderConfig& config() const { return config_; }
  const EncoderWeights<T>& weights() const { return weights_; }
  EncoderWeights<T>& weights() { return weights_; }

  // Final-layer hidden states, one row per token. cache may be null.
  Mat<T> forward(std::span<const int> ids, EncoderCache<T>* cache, DropoutContext dropout = {}) const;
  // Accumulates parameter gradients for d_out (same shape as forward's output).
  void backward(const EncoderCache<T>& cache, const Mat<T>& d_out, EncoderWeights<T>& grads) const;

  // Vocabulary logits for selected hidden rows.
  Mat<T> mlm_logits(const Mat<T>& hidden, MlmCache<T>* cache) const;
  // Returns d hidden, accumulates head and tied embedding gradients.
  Mat<T> mlm_backward(const MlmCache<T>& cache, const Mat<T>& d_logits, EncoderWeights<T>& grads) const;

 private:
  EncoderConfig config_;
  EncoderWeights<T> weights_;
};

extern template struct EncoderWeights<float>;
extern template struct EncoderWeights<double>;
extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace mppt

#include "mppt/encoder.hpp"

#include <cmath>
#include <numbers>

#include "mppt/common.hpp"

namespace mppt {

using nlohmann::json;

std::int64_t EncoderConfig::parameter_count() const {
  const std::int64_t d = hidden_size;
  const std::int64_t ff = intermediate_size;
  const std::int64_t embeddings = (static_cast<std::int64_t>(vocab_size) + max_position_embeddings + type_vocab_size) * d + 2 * d;
  const std::int64_t layer = 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d;
  const std::int64_t head = d * d + d + 2 * d + vocab_size;
  return embeddings + num_layers * layer + head;
}

void EncoderConfig::validate() const {
  if (vocab_size <= 0) throw Error(ErrorCode::InvalidConfig, "encoder vocab_size must be positive");
  if (hidden_size <= 0 || num_layers <= 0 || num_heads <= 0 || intermediate_size <= 0) {
    throw Error(ErrorCode::InvalidConfig, "encoder dimensions must be positive");
  }
  if (hidden_size % num_heads != 0) throw Error(ErrorCode::InvalidConfig, "hidden_size must be divisible by num_attention_heads");
  if (max_position_embeddings <= 2) throw Error(ErrorCode::InvalidConfig, "max_position_embeddings too small");
  if (type_vocab_size <= 0) throw Error(ErrorCode::InvalidConfig, "type_vocab_size must be positive");
  if (hidden_dropout < 0.0 || hidden_dropout >= 1.0) throw Error(ErrorCode::InvalidConfig, "hidden_dropout_prob must be in [0,1)");
}

json EncoderConfig::to_json() const {
  return {{"architectures", json::array({"BertForMaskedLM"})},
          {"model_type", "bert"},
          {"vocab_size", vocab_size},
          {"hidden_size", hidden_size},
          {"num_hidden_layers", num_layers},
          {"num_attention_heads", num_heads},
          {"intermediate_size", intermediate_size},
          {"max_position_embeddings", max_position_embeddings},
          {"type_vocab_size", type_vocab_size},
          {"layer_norm_eps", layer_norm_eps},
          {"initializer_range", initializer_range},
          {"hidden_dropout_prob", hidden_dropout},
          {"attention_probs_dropout_prob", 0.0},
          {"hidden_act", "gelu"},
          {"position_embedding_type", "absolute"}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.num_layers = j.value("num_hidden_layers", c.num_layers);
  c.num_heads = j.value("num_attention_heads", c.num_heads);
  c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
  c.max_position_embeddings = j.value("max_position_embeddings", c.max_position_embeddings);
  c.type_vocab_size = j.value("type_vocab_size", c.type_vocab_size);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.initializer_range = j.value("initializer_range", c.initializer_range);
  c.hidden_dropout = j.value("hidden_dropout_prob", c.hidden_dropout);
  const std::string act = j.value("hidden_act", std::string("gelu"));
  if (act != "gelu") throw Error(ErrorCode::InvalidConfig, "unsupported hidden_act '" + act + "'");
  const std::string pos = j.value("position_embedding_type", std::string("absolute"));
  if (pos != "absolute") throw Error(ErrorCode::InvalidConfig, "unsupported position_embedding_type '" + pos + "'");
  c.validate();
  return c;
}

template <typename T>
EncoderWeights<T> EncoderWeights<T>::zeros(const EncoderConfig& c) {
  const int d = c.hidden_size;
  const int ff = c.intermediate_size;
  EncoderWeights w;
  w.word_emb = Mat<T>::Zero(c.vocab_size, d);
  w.pos_emb = Mat<T>::Zero(c.max_position_embeddings, d);
  w.type_emb = Mat<T>::Zero(c.type_vocab_size, d);
  w.emb_ln_g = Mat<T>::Zero(1, d);
  w.emb_ln_b = Mat<T>::Zero(1, d);
  w.layers.resize(static_cast<std::size_t>(c.num_layers));
  for (auto& l : w.layers) {
    for (Mat<T>* m : {&l.q_w, &l.k_w, &l.v_w, &l.o_w}) *m = Mat<T>::Zero(d, d);
    for (Mat<T>* m : {&l.q_b, &l.k_b, &l.v_b, &l.o_b, &l.ln1_g, &l.ln1_b, &l.ff2_b, &l.ln2_g, &l.ln2_b}) *m = Mat<T>::Zero(1, d);
    l.ff1_w = Mat<T>::Zero(d, ff);
    l.ff1_b = Mat<T>::Zero(1, ff);
    l.ff2_w = Mat<T>::Zero(ff, d);
  }
  w.mlm_w = Mat<T>::Zero(d, d);
  w.mlm_b = Mat<T>::Zero(1, d);
  w.mlm_ln_g = Mat<T>::Zero(1, d);
  w.mlm_ln_b = Mat<T>::Zero(1, d);
  w.mlm_bias = Mat<T>::Zero(1, c.vocab_size);
  return w;
}

template <typename T>
EncoderWeights<T> EncoderWeights<T>::random(const EncoderConfig& c, Rng& rng) {
  EncoderWeights w = zeros(c);
  const double sd = c.initializer_range;
  w.visit([&](const std::string& name, Mat<T>& m, ParamKind kind) {
    if (kind == ParamKind::Embedding || kind == ParamKind::Linear) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(sd * rng.normal());
    } else if (kind == ParamKind::Norm && name.ends_with(".weight")) {
      m.setOnes();
    }
  });
  return w;
}

template <typename T>
void EncoderWeights<T>::set_zero() {
  visit([](const std::string&, Mat<T>& m, ParamKind) { m.setZero(); });
}

namespace {

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, double eps, LayerNormCache<T>* cache) {
  const auto n = x.cols();
  ColVec<T> mean = x.rowwise().mean();
  Mat<T> centered = x.colwise() - mean;
  ColVec<T> var = centered.array().square().rowwise().sum() / static_cast<T>(n);
  ColVec<T> inv_std = (var.array() + static_cast<T>(eps)).rsqrt();
  Mat<T> xhat = centered.array().colwise() * inv_std.array();
  Mat<T> y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const LayerNormCache<T>& c, const Mat<T>& dy, const Mat<T>& g, Mat<T>& dg, Mat<T>& db) {
  const auto n = static_cast<T>(dy.cols());
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  ColVec<T> sum_dxhat = dxhat.rowwise().sum();
  ColVec<T> sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum();
  Mat<T> dx = (dxhat * n).colwise() - sum_dxhat;
  dx -= (c.xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
  dx = (dx.array().colwise() * (c.inv_std.array() / n)).matrix();
  return dx;
}

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * (std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>);
  return cdf + x * pdf;
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
void linear_backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>& dw, Mat<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
}

// Inverted-dropout scale mask, or an empty matrix when inactive.
template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, DropoutContext ctx) {
  if (!ctx.active()) return {};
  Mat<T> mask(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - ctx.p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = ctx.rng->uniform() < ctx.p ? T(0) : keep;
  return mask;
}

template <typename T>
void apply_mask(Mat<T>& x, const Mat<T>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

}  // namespace

template <typename T>
Encoder<T>::Encoder(EncoderConfig config, EncoderWeights<T> weights) : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  if (weights_.word_emb.rows() != config_.vocab_size || weights_.word_emb.cols() != config_.hidden_size ||
      weights_.layers.size() != static_cast<std::size_t>(config_.num_layers)) {
    throw Error(ErrorCode::InvalidConfig, "encoder weights do not match the configuration");
  }
}

template <typename T>
Mat<T> Encoder<T>::forward(std::span<const int> ids, EncoderCache<T>* cache, DropoutContext dropout) const {
  const auto len = static_cast<Eigen::Index>(ids.size());
  if (len == 0) throw Error(ErrorCode::InvalidArgument, "empty token sequence");
  if (len > config_.max_position_embeddings) {
    throw Error(ErrorCode::SequenceOverflow,
                std::to_string(len) + " tokens exceed max_position_embeddings " + std::to_string(config_.max_position_embeddings));
  }
  const auto& w = weights_;
  const int d = config_.hidden_size;
  const int heads = config_.num_heads;
  const int dh = config_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> emb(len, d);
  for (Eigen::Index i = 0; i < len; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= config_.vocab_size) throw Error(ErrorCode::InvalidArgument, "token id out of range");
    emb.row(i) = w.word_emb.row(id) + w.pos_emb.row(i) + w.type_emb.row(0);
  }
  if (cache != nullptr) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.resize(w.layers.size());
  }
  Mat<T> x = layer_norm(emb, w.emb_ln_g, w.emb_ln_b, config_.layer_norm_eps, cache ? &cache->emb_ln : nullptr);
  Mat<T> emb_mask = dropout_mask<T>(len, d, dropout);
  apply_mask(x, emb_mask);
  if (cache != nullptr) cache->emb_mask = std::move(emb_mask);

  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    const auto& l = w.layers[li];
    Mat<T> q = linear(x, l.q_w, l.q_b);
    Mat<T> k = linear(x, l.k_w, l.k_b);
    Mat<T> v = linear(x, l.v_w, l.v_b);
    Mat<T> ctx(len, d);
    std::vector<Mat<T>> probs(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Mat<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
      ColVec<T> row_max = s.rowwise().maxCoeff();
      Mat<T> p = (s.colwise() - row_max).array().exp();
      ColVec<T> row_sum = p.rowwise().sum();
      p = p.array().colwise() / row_sum.array();
      ctx.middleCols(h * dh, dh) = p * v.middleCols(h * dh, dh);
      probs[static_cast<std::size_t>(h)] = std::move(p);
    }
    Mat<T> attn = linear(ctx, l.o_w, l.o_b);
    Mat<T> attn_mask = dropout_mask<T>(len, d, dropout);
    apply_mask(attn, attn_mask);
    LayerNormCache<T>* ln1 = cache ? &cache->layers[li].ln1 : nullptr;
    Mat<T> h1 = layer_norm<T>(x + attn, l.ln1_g, l.ln1_b, config_.layer_norm_eps, ln1);

    Mat<T> ff_pre = linear(h1, l.ff1_w, l.ff1_b);
    Mat<T> ff_act = ff_pre.unaryExpr([](T z) { return gelu(z); });
    Mat<T> ff_out = linear(ff_act, l.ff2_w, l.ff2_b);
    Mat<T> ff_mask = dropout_mask<T>(len, d, dropout);
    apply_mask(ff_out, ff_mask);
    LayerNormCache<T>* ln2 = cache ? &cache->layers[li].ln2 : nullptr;
    Mat<T> out = layer_norm<T>(h1 + ff_out, l.ln2_g, l.ln2_b, config_.layer_norm_eps, ln2);

    if (cache != nullptr) {
      auto& lc = cache->layers[li];
      lc.x = std::move(x);
      lc.q = std::move(q);
      lc.k = std::move(k);
      lc.v = std::move(v);
      lc.ctx = std::move(ctx);
      lc.probs = std::move(probs);
      lc.attn_mask = std::move(attn_mask);
      lc.h1 = std::move(h1);
      lc.ff_pre = std::move(ff_pre);
      lc.ff_act = std::move(ff_act);
      lc.ff_mask = std::move(ff_mask);
    }
    x = std::move(out);
  }
  return x;
}

template <typename T>
void Encoder<T>::backward(const EncoderCache<T>& cache, const Mat<T>& d_out, EncoderWeights<T>& g) const {
  const auto& w = weights_;
  const int heads = config_.num_heads;
  const int dh = config_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> dx = d_out;
  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const auto& l = w.layers[li];
    auto& gl = g.layers[li];
    const auto& c = cache.layers[li];

    Mat<T> d_sum2 = layer_norm_backward(c.ln2, dx, l.ln2_g, gl.ln2_g, gl.ln2_b);
    Mat<T> d_ff_out = d_sum2;
    apply_mask(d_ff_out, c.ff_mask);
    linear_backward(c.ff_act, d_ff_out, gl.ff2_w, gl.ff2_b);
    Mat<T> d_ff_act = d_ff_out * l.ff2_w.transpose();
    Mat<T> d_ff_pre = d_ff_act.array() * c.ff_pre.unaryExpr([](T z) { return gelu_grad(z); }).array();
    linear_backward(c.h1, d_ff_pre, gl.ff1_w, gl.ff1_b);
    Mat<T> d_h1 = d_sum2 + d_ff_pre * l.ff1_w.transpose();

    Mat<T> d_sum1 = layer_norm_backward(c.ln1, d_h1, l.ln1_g, gl.ln1_g, gl.ln1_b);
    Mat<T> d_attn = d_sum1;
    apply_mask(d_attn, c.attn_mask);
    linear_backward(c.ctx, d_attn, gl.o_w, gl.o_b);
    Mat<T> d_ctx = d_attn * l.o_w.transpose();

    Mat<T> dq(d_ctx.rows(), d_ctx.cols());
    Mat<T> dk(d_ctx.rows(), d_ctx.cols());
    Mat<T> dv(d_ctx.rows(), d_ctx.cols());
    for (int h = 0; h < heads; ++h) {
      const auto& p = c.probs[static_cast<std::size_t>(h)];
      Mat<T> d_ctx_h = d_ctx.middleCols(h * dh, dh);
      Mat<T> dp = d_ctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * d_ctx_h;
      ColVec<T> dot = (dp.array() * p.array()).rowwise().sum();
      Mat<T> ds = p.array() * (dp.colwise() - dot).array();
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    linear_backward(c.x, dq, gl.q_w, gl.q_b);
    linear_backward(c.x, dk, gl.k_w, gl.k_b);
    linear_backward(c.x, dv, gl.v_w, gl.v_b);
    dx = d_sum1;
    dx.noalias() += dq * l.q_w.transpose();
    dx.noalias() += dk * l.k_w.transpose();
    dx.noalias() += dv * l.v_w.transpose();
  }

  apply_mask(dx, cache.emb_mask);
  Mat<T> d_emb = layer_norm_backward(cache.emb_ln, dx, w.emb_ln_g, g.emb_ln_g, g.emb_ln_b);
  for (Eigen::Index i = 0; i < d_emb.rows(); ++i) {
    g.word_emb.row(cache.ids[static_cast<std::size_t>(i)]) += d_emb.row(i);
    g.pos_emb.row(i) += d_emb.row(i);
    g.type_emb.row(0) += d_emb.row(i);
  }
}

template <typename T>
Mat<T> Encoder<T>::mlm_logits(const Mat<T>& hidden, MlmCache<T>* cache) const {
  const auto& w = weights_;
  Mat<T> pre = linear(hidden, w.mlm_w, w.mlm_b);
  Mat<T> act = pre.unaryExpr([](T z) { return gelu(z); });
  Mat<T> normed = layer_norm(act, w.mlm_ln_g, w.mlm_ln_b, config_.layer_norm_eps, cache ? &cache->ln : nullptr);
  Mat<T> logits = normed * w.word_emb.transpose();
  logits.rowwise() += w.mlm_bias.row(0);
  if (cache != nullptr) {
    cache->x = hidden;
    cache->pre = std::move(pre);
    cache->act = std::move(normed);  // normalized output, needed for the tied decoder
  }
  return logits;
}

template <typename T>
Mat<T> Encoder<T>::mlm_backward(const MlmCache<T>& cache, const Mat<T>& d_logits, EncoderWeights<T>& g) const {
  const auto& w = weights_;
  g.mlm_bias.row(0) += d_logits.colwise().sum();
  g.word_emb.noalias() += d_logits.transpose() * cache.act;
  Mat<T> d_normed = d_logits * w.word_emb;
  Mat<T> d_act = layer_norm_backward(cache.ln, d_normed, w.mlm_ln_g, g.mlm_ln_g, g.mlm_ln_b);
  Mat<T> d_pre = d_act.array() * cache.pre.unaryExpr([](T z) { return gelu_grad(z); }).array();
  linear_backward(cache.x, d_pre, g.mlm_w, g.mlm_b);
  return d_pre * w.mlm_w.transpose();
}

template struct EncoderWeights<float>;
template struct EncoderWeights<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace mppt

#include "mppt/pretrain.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "mppt/common.hpp"
#include "mppt/optimizer.hpp"
#include "mppt/parallel.hpp"

namespace mppt {

namespace {

struct MaskedSequence {
  std::vector<int> ids;        // after replacement
  std::vector<int> positions;  // masked positions
  std::vector<int> targets;    // original ids at those positions
};

MaskedSequence mask_sequence(std::vector<int> ids, const WordPieceTokenizer& tok, double p, Rng& rng) {
  MaskedSequence out;
  const int first_regular = 5;  // ids below are specials
  const auto n = static_cast<int>(ids.size());
  for (int i = 1; i + 1 < n; ++i) {
    if (rng.uniform() < p) out.positions.push_back(i);
  }
  if (out.positions.empty() && n > 2) out.positions.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 2))));
  for (int pos : out.positions) {
    out.targets.push_back(ids[static_cast<std::size_t>(pos)]);
    const double r = rng.uniform();
    if (r < 0.8) {
      ids[static_cast<std::size_t>(pos)] = tok.mask_id();
    } else if (r < 0.9) {
      ids[static_cast<std::size_t>(pos)] = first_regular + static_cast<int>(rng.below(tok.size() - first_regular));
    }
  }
  out.ids = std::move(ids);
  return out;
}

double schedule(const PretrainOptions& o, int step) {
  if (step < o.warmup) return o.lr * (step + 1) / o.warmup;
  const double rest = std::max(1, o.steps - o.warmup);
  return o.lr * std::max(0.0, 1.0 - (step - o.warmup) / rest);
}

}  // namespace

PretrainResult pretrain_mlm(const std::vector<std::string>& corpus, const std::vector<std::string>& required_words,
                            const PretrainOptions& options) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyInput, "pretraining corpus is empty");
  if (options.steps <= 0 || options.batch_size <= 0) throw Error(ErrorCode::InvalidConfig, "steps and batch_size must be positive");
  WordPieceTokenizer tok(build_wordpiece_vocab(corpus, required_words, options.vocab_limit));
  EncoderConfig config = options.arch;
  config.vocab_size = static_cast<int>(tok.size());
  config.max_position_embeddings = std::max(config.max_position_embeddings, options.max_seq_len);
  config.validate();

  std::vector<std::vector<int>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& s : corpus) {
    auto ids = tok.encode(s);
    if (static_cast<int>(ids.size()) > options.max_seq_len) {
      ids.resize(static_cast<std::size_t>(options.max_seq_len));
      ids.back() = tok.sep_id();
    }
    encoded.push_back(std::move(ids));
  }

  Rng init = Rng::stream(options.seed, "mlm-init");
  Encoder<float> encoder(config, EncoderWeights<float>::random(config, init));
  Rng order = Rng::stream(options.seed, "mlm-order");
  Rng masking = Rng::stream(options.seed, "mlm-mask");
  AdamWOptions adam;
  adam.lr = options.lr;
  AdamW optimizer(adam);

  const std::size_t workers = std::max<std::size_t>(1, options.threads);
  std::vector<EncoderWeights<float>> worker_grads;
  for (std::size_t w = 0; w < workers; ++w) worker_grads.push_back(EncoderWeights<float>::zeros(config));
  std::vector<double> worker_loss(workers);

  std::vector<std::size_t> perm(encoded.size());
  std::size_t cursor = perm.size();
  std::vector<double> losses;
  for (int step = 0; step < options.steps; ++step) {
    std::vector<MaskedSequence> batch;
    std::size_t total = 0;
    for (int b = 0; b < options.batch_size; ++b) {
      if (cursor == perm.size()) {
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        order.shuffle(perm);
        cursor = 0;
      }
      batch.push_back(mask_sequence(encoded[perm[cursor++]], tok, options.mask_prob, masking));
      total += batch.back().positions.size();
    }
    for (auto& g : worker_grads) g.set_zero();
    std::fill(worker_loss.begin(), worker_loss.end(), 0.0);
    const float scale = 1.0f / static_cast<float>(total);

    for_each_pinned(workers, batch.size(), [&](std::size_t w, std::size_t i) {
      const auto& seq = batch[i];
      Rng drop = Rng::stream(options.seed, "mlm-dropout/" + std::to_string(step) + "/" + std::to_string(i));
      EncoderCache<float> cache;
      const Mat<float> hidden = encoder.forward(seq.ids, &cache, {&drop, config.hidden_dropout});
      Mat<float> rows(static_cast<Eigen::Index>(seq.positions.size()), config.hidden_size);
      for (std::size_t k = 0; k < seq.positions.size(); ++k) rows.row(static_cast<Eigen::Index>(k)) = hidden.row(seq.positions[k]);
      MlmCache<float> mcache;
      const Mat<float> logits = encoder.mlm_logits(rows, &mcache);
      Mat<float> d_logits(logits.rows(), logits.cols());
      for (Eigen::Index k = 0; k < logits.rows(); ++k) {
        const float mx = logits.row(k).maxCoeff();
        const Eigen::Array<float, 1, Eigen::Dynamic> ex = (logits.row(k).array() - mx).exp();
        const float z = ex.sum();
        const int t = seq.targets[static_cast<std::size_t>(k)];
        worker_loss[w] += std::log(static_cast<double>(z)) - static_cast<double>(logits(k, t) - mx);
        d_logits.row(k) = scale * (ex / z).matrix();
        d_logits(k, t) -= scale;
      }
      const Mat<float> d_rows = encoder.mlm_backward(mcache, d_logits, worker_grads[w]);
      Mat<float> d_hidden = Mat<float>::Zero(hidden.rows(), hidden.cols());
      for (std::size_t k = 0; k < seq.positions.size(); ++k) d_hidden.row(seq.positions[k]) += d_rows.row(static_cast<Eigen::Index>(k));
      encoder.backward(cache, d_hidden, worker_grads[w]);
    });

    double loss = 0.0;
    for (double l : worker_loss) loss += l;
    loss /= static_cast<double>(total);
    if (!std::isfinite(loss)) throw Error(ErrorCode::DivergenceDetected, "non-finite masked-LM loss at step " + std::to_string(step));
    losses.push_back(loss);

    for (std::size_t w = 1; w < workers; ++w) {
      std::vector<Mat<float>*> dst;
      worker_grads[0].visit([&](const std::string&, Mat<float>& m, ParamKind) { dst.push_back(&m); });
      std::size_t k = 0;
      worker_grads[w].visit([&](const std::string&, const Mat<float>& m, ParamKind) { *dst[k++] += m; });
    }
    std::vector<multipln::ParamRef> params;
    encoder.weights().visit([&](const std::string& name, Mat<float>& m, ParamKind kind) {
      params.push_back({name, &m, nullptr, kind == ParamKind::Embedding || kind == ParamKind::Linear});
    });
    std::size_t k = 0;
    worker_grads[0].visit([&](const std::string&, Mat<float>& m, ParamKind) { params[k++].grad = &m; });
    optimizer.options().lr = schedule(options, step);
    optimizer.step(params);
    if ((step + 1) % 50 == 0 || step == 0) spdlog::info("pretrain step {}/{} loss {:.4f}", step + 1, options.steps, loss);
  }
  return {Backbone{options.identity, config, encoder.weights(), std::move(tok)}, std::move(losses)};
}

}  // namespace mppt

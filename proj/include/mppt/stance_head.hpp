#pragma once

#include <array>
#include <span>
#include <string>

#include "mppt/common.hpp"
#include "mppt/encoder.hpp"
#include "mppt/verbalizer.hpp"

namespace mppt::multipln {

inline constexpr double kLossFloor = 1e-12;

enum class LabelScoring {
  WordSoftmax,         // softmax over every label word, then per-label aggregation
  LabelMeanEmbedding,  // softmax over per-label mean word embeddings
};

std::string to_string(LabelScoring s);
LabelScoring parse_label_scoring(std::string_view s);

struct HeadOptions {
  verbalizer::Aggregation aggregation = verbalizer::Aggregation::Sum;
  LabelScoring scoring = LabelScoring::WordSoftmax;
};

template <typename T>
struct Fused {
  ColVec<T> alpha;  // gamma attention weights
  RowVec<T> e;      // fused stance vector
};

// R holds one perspective vector per row.
template <typename T>
Fused<T> fuse(const Mat<T>& R, const RowVec<T>& h);

template <typename T>
ColVec<T> softmax(const ColVec<T>& logits);

// Softmax over w_i . e for every unit embedding row of U.
template <typename T>
ColVec<T> score_label_words(const RowVec<T>& e, const Mat<T>& U);

template <typename T>
T loss(const std::array<T, kNumLabels>& yhat, StanceLabel y);

template <typename T>
struct HeadForward {
  Fused<T> fused;
  ColVec<T> delta;  // per unit, or per label under LabelMeanEmbedding
  std::array<T, kNumLabels> yhat{};
};

template <typename T>
struct HeadGrads {
  Mat<T> dR;
  RowVec<T> dh;
  Mat<T> dU;
};

template <typename T>
HeadForward<T> head_forward(const Mat<T>& R, const RowVec<T>& h, const Mat<T>& U, std::span<const StanceLabel> unit_labels,
                            const HeadOptions& options);

// Gradients of loss(yhat, y) with respect to R, h and U.
template <typename T>
HeadGrads<T> head_backward(const HeadForward<T>& fwd, const Mat<T>& R, const RowVec<T>& h, const Mat<T>& U,
                           std::span<const StanceLabel> unit_labels, StanceLabel y, const HeadOptions& options);

// Unit embeddings from the word-embedding table (multi-piece units average rows).
template <typename T>
Mat<T> unit_embeddings(const verbalizer::MaterializedVerbalizer& units, const Mat<T>& word_emb);
// Scatters dU back into word-embedding gradients.
template <typename T>
void scatter_unit_grads(const verbalizer::MaterializedVerbalizer& units, const Mat<T>& dU, Mat<T>& d_word_emb);

StanceLabel argmax_label(std::span<const double> yhat);

}  // namespace mppt::multipln

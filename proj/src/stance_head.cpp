#include "mppt/stance_head.hpp"

#include <cmath>

#include "mppt/text.hpp"

namespace mppt::multipln {

std::string to_string(LabelScoring s) { return s == LabelScoring::WordSoftmax ? "word_softmax" : "label_mean_embedding"; }

LabelScoring parse_label_scoring(std::string_view s) {
  const std::string lower = text::to_lower(s);
  if (lower == "word_softmax") return LabelScoring::WordSoftmax;
  if (lower == "label_mean_embedding") return LabelScoring::LabelMeanEmbedding;
  throw Error(ErrorCode::InvalidConfig, "unknown label scoring '" + std::string(s) + "'");
}

template <typename T>
ColVec<T> softmax(const ColVec<T>& logits) {
  ColVec<T> p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

template <typename T>
Fused<T> fuse(const Mat<T>& R, const RowVec<T>& h) {
  if (R.rows() == 0 || R.cols() != h.cols()) throw Error(ErrorCode::InvalidArgument, "fuse: dimension mismatch");
  Fused<T> out;
  out.alpha = softmax<T>(R * h.transpose());
  out.e = out.alpha.transpose() * R;
  return out;
}

template <typename T>
ColVec<T> score_label_words(const RowVec<T>& e, const Mat<T>& U) {
  return softmax<T>(U * e.transpose());
}

template <typename T>
T loss(const std::array<T, kNumLabels>& yhat, StanceLabel y) {
  return -std::log(std::max(yhat[index_of(y)], static_cast<T>(kLossFloor)));
}

namespace {

template <typename T>
Mat<T> label_means(const Mat<T>& U, std::span<const StanceLabel> labels, std::array<T, kNumLabels>& counts) {
  Mat<T> means = Mat<T>::Zero(kNumLabels, U.cols());
  counts = {};
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    const auto c = index_of(labels[static_cast<std::size_t>(i)]);
    means.row(static_cast<Eigen::Index>(c)) += U.row(i);
    counts[c] += 1;
  }
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    if (counts[c] > 0) means.row(static_cast<Eigen::Index>(c)) /= counts[c];
  }
  return means;
}

}  // namespace

template <typename T>
HeadForward<T> head_forward(const Mat<T>& R, const RowVec<T>& h, const Mat<T>& U, std::span<const StanceLabel> unit_labels,
                            const HeadOptions& options) {
  if (static_cast<std::size_t>(U.rows()) != unit_labels.size()) throw Error(ErrorCode::InvalidArgument, "unit label count mismatch");
  HeadForward<T> out;
  out.fused = fuse(R, h);
  if (options.scoring == LabelScoring::WordSoftmax) {
    out.delta = score_label_words(out.fused.e, U);
    out.yhat = verbalizer::aggregate_mu<T>(std::span<const T>(out.delta.data(), static_cast<std::size_t>(out.delta.size())), unit_labels,
                                           options.aggregation);
  } else {
    std::array<T, kNumLabels> counts{};
    const Mat<T> means = label_means(U, unit_labels, counts);
    out.delta = softmax<T>(means * out.fused.e.transpose());
    for (std::size_t c = 0; c < kNumLabels; ++c) out.yhat[c] = out.delta(static_cast<Eigen::Index>(c));
  }
  return out;
}

template <typename T>
HeadGrads<T> head_backward(const HeadForward<T>& fwd, const Mat<T>& R, const RowVec<T>& h, const Mat<T>& U,
                           std::span<const StanceLabel> unit_labels, StanceLabel y, const HeadOptions& options) {
  const auto yi = index_of(y);
  HeadGrads<T> g;
  g.dU = Mat<T>::Zero(U.rows(), U.cols());
  RowVec<T> de;

  // The clamp in loss() has zero gradient below the floor.
  const bool clamped = fwd.yhat[yi] < static_cast<T>(kLossFloor);

  if (options.scoring == LabelScoring::WordSoftmax) {
    const Eigen::Index m = U.rows();
    ColVec<T> d_delta = ColVec<T>::Zero(m);
    if (!clamped) {
      if (options.aggregation == verbalizer::Aggregation::Sum) {
        for (Eigen::Index i = 0; i < m; ++i) {
          if (index_of(unit_labels[static_cast<std::size_t>(i)]) == yi) d_delta(i) = -1 / fwd.yhat[yi];
        }
      } else {
        // yhat = mbar / sum(mbar), mbar_c = mean of the label's deltas.
        std::array<T, kNumLabels> sums{};
        std::array<T, kNumLabels> counts{};
        for (Eigen::Index i = 0; i < m; ++i) {
          const auto c = index_of(unit_labels[static_cast<std::size_t>(i)]);
          sums[c] += fwd.delta(i);
          counts[c] += 1;
        }
        std::array<T, kNumLabels> mbar{};
        T total = 0;
        for (std::size_t c = 0; c < kNumLabels; ++c) {
          mbar[c] = counts[c] > 0 ? sums[c] / counts[c] : T(0);
          total += mbar[c];
        }
        for (Eigen::Index i = 0; i < m; ++i) {
          const auto c = index_of(unit_labels[static_cast<std::size_t>(i)]);
          T d_mbar = 1 / total;
          if (c == yi) d_mbar -= 1 / mbar[yi];
          d_delta(i) = d_mbar / counts[c];
        }
      }
    }
    const T dot = fwd.delta.dot(d_delta);
    const ColVec<T> dz = fwd.delta.array() * (d_delta.array() - dot);
    de = dz.transpose() * U;
    g.dU = dz * fwd.fused.e;
  } else {
    std::array<T, kNumLabels> counts{};
    const Mat<T> means = label_means(U, unit_labels, counts);
    ColVec<T> dz = ColVec<T>::Zero(kNumLabels);
    if (!clamped) {
      dz = fwd.delta;
      dz(static_cast<Eigen::Index>(yi)) -= 1;
    }
    de = dz.transpose() * means;
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
      const auto c = index_of(unit_labels[static_cast<std::size_t>(i)]);
      g.dU.row(i) = (dz(static_cast<Eigen::Index>(c)) / counts[c]) * fwd.fused.e;
    }
  }

  // e = alpha^T R, alpha = softmax(R h).
  const ColVec<T>& alpha = fwd.fused.alpha;
  const ColVec<T> d_alpha = R * de.transpose();
  const ColVec<T> ds = alpha.array() * (d_alpha.array() - alpha.dot(d_alpha));
  g.dR = alpha * de + ds * h;
  g.dh = ds.transpose() * R;
  return g;
}

template <typename T>
Mat<T> unit_embeddings(const verbalizer::MaterializedVerbalizer& units, const Mat<T>& word_emb) {
  Mat<T> U = Mat<T>::Zero(static_cast<Eigen::Index>(units.units.size()), word_emb.cols());
  for (std::size_t i = 0; i < units.units.size(); ++i) {
    const auto& ids = units.units[i].token_ids;
    for (int id : ids) U.row(static_cast<Eigen::Index>(i)) += word_emb.row(id);
    U.row(static_cast<Eigen::Index>(i)) /= static_cast<T>(ids.size());
  }
  return U;
}

template <typename T>
void scatter_unit_grads(const verbalizer::MaterializedVerbalizer& units, const Mat<T>& dU, Mat<T>& d_word_emb) {
  for (std::size_t i = 0; i < units.units.size(); ++i) {
    const auto& ids = units.units[i].token_ids;
    for (int id : ids) d_word_emb.row(id) += dU.row(static_cast<Eigen::Index>(i)) / static_cast<T>(ids.size());
  }
}

StanceLabel argmax_label(std::span<const double> yhat) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumLabels; ++c) {
    if (yhat[c] > yhat[best]) best = c;
  }
  return kAllLabels[best];
}

#define MPPT_INSTANTIATE_HEAD(T)                                                                                               \
  template ColVec<T> softmax<T>(const ColVec<T>&);                                                                             \
  template Fused<T> fuse<T>(const Mat<T>&, const RowVec<T>&);                                                                  \
  template ColVec<T> score_label_words<T>(const RowVec<T>&, const Mat<T>&);                                                    \
  template T loss<T>(const std::array<T, kNumLabels>&, StanceLabel);                                                           \
  template HeadForward<T> head_forward<T>(const Mat<T>&, const RowVec<T>&, const Mat<T>&, std::span<const StanceLabel>,         \
                                          const HeadOptions&);                                                                 \
  template HeadGrads<T> head_backward<T>(const HeadForward<T>&, const Mat<T>&, const RowVec<T>&, const Mat<T>&,                \
                                         std::span<const StanceLabel>, StanceLabel, const HeadOptions&);                       \
  template Mat<T> unit_embeddings<T>(const verbalizer::MaterializedVerbalizer&, const Mat<T>&);                                 \
  template void scatter_unit_grads<T>(const verbalizer::MaterializedVerbalizer&, const Mat<T>&, Mat<T>&);

MPPT_INSTANTIATE_HEAD(float)
MPPT_INSTANTIATE_HEAD(double)

}  // namespace mppt::multipln

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "mppt/model.hpp"
#include "mppt/optimizer.hpp"
#include "mppt/prompt.hpp"
#include "mppt/stance_head.hpp"
#include "mppt/text.hpp"
#include "test_support.hpp"

using namespace mppt;
using namespace mppt::multipln;

namespace {

template <typename T>
Mat<T> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * rng.normal());
  return m;
}

corpus::Example example(std::string id, std::string text, std::string target, StanceLabel label = StanceLabel::Favor) {
  return corpus::Example{std::move(id), std::move(text), std::move(target), label, corpus::Split::Train};
}

tscot::Explanation nle(std::string id, int index, std::string perspective, std::string text) {
  tscot::Explanation e;
  e.example_id = std::move(id);
  e.perspective_index = index;
  e.perspective = std::move(perspective);
  e.text = std::move(text);
  return e;
}

std::vector<StanceLabel> random_labels(Rng& rng, std::size_t m) {
  // Every label present at least once.
  std::vector<StanceLabel> labels(kAllLabels.begin(), kAllLabels.end());
  while (labels.size() < m) labels.push_back(kAllLabels[rng.below(kNumLabels)]);
  rng.shuffle(labels);
  return labels;
}

double rel_error(const Mat<double>& analytic, const Mat<double>& numeric) {
  const double denom = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / denom;
}

}  // namespace

TEST_CASE("fuse examples") {
  Mat<double> R1(1, 3);
  R1 << 0.3, -1.0, 2.0;
  RowVec<double> h(3);
  h << 5, 5, 5;
  const auto f1 = fuse<double>(R1, h);
  CHECK(f1.alpha(0) == 1.0);
  CHECK(f1.e == R1.row(0));

  Mat<double> same(2, 3);
  same << 1, 2, 3, 1, 2, 3;
  const auto f2 = fuse<double>(same, h);
  CHECK(f2.alpha(0) == doctest::Approx(0.5));
  CHECK((f2.e - same.row(0)).norm() < 1e-12);

  Mat<double> R(2, 2);
  R << 2, 0, 0, 2;
  RowVec<double> h2(2);
  h2 << 1, 0;
  const auto f3 = fuse<double>(R, h2);
  const double e2 = std::exp(2.0);
  CHECK(f3.alpha(0) == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-12));
  CHECK(f3.alpha(0) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(f3.alpha(1) == doctest::Approx(0.1192).epsilon(1e-3));
  CHECK(f3.e(0) == doctest::Approx(1.7616).epsilon(1e-4));
  CHECK(f3.e(1) == doctest::Approx(0.2384).epsilon(1e-3));
}

TEST_CASE("fuse convexity and shift invariance over 1000 draws") {
  Rng rng(77);
  for (int t = 0; t < 1000; ++t) {
    const auto gamma = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(16));
    const Mat<double> R = random_mat<double>(rng, gamma, d, 2.0);
    const RowVec<double> h = random_mat<double>(rng, 1, d).row(0);
    const auto f = fuse<double>(R, h);
    REQUIRE((f.alpha.array() >= 0).all());
    REQUIRE(std::abs(f.alpha.sum() - 1.0) < 1e-6);
    RowVec<double> manual = RowVec<double>::Zero(d);
    for (Eigen::Index i = 0; i < gamma; ++i) manual += f.alpha(i) * R.row(i);
    REQUIRE((manual - f.e).cwiseAbs().maxCoeff() < 1e-6);
    // Inside the bounding box of R (implied by convexity).
    for (Eigen::Index j = 0; j < d; ++j) {
      REQUIRE(f.e(j) <= R.col(j).maxCoeff() + 1e-9);
      REQUIRE(f.e(j) >= R.col(j).minCoeff() - 1e-9);
    }
    const ColVec<double> logits = R * h.transpose();
    const double c = 10 * rng.normal();
    const ColVec<double> shifted = softmax<double>((logits.array() + c).matrix());
    REQUIRE((shifted - f.alpha).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("score_label_words examples") {
  Mat<double> U(3, 2);
  U << 1, 0, 0, 0, -1, 0;
  RowVec<double> e(2);
  e << 1, 5;
  const auto delta = score_label_words<double>(e, U);
  CHECK(delta(0) == doctest::Approx(0.6652).epsilon(1e-4));
  CHECK(delta(1) == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(delta(2) == doctest::Approx(0.0900).epsilon(1e-3));

  const auto zero = score_label_words<double>(RowVec<double>::Zero(2), U);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(zero(i) == doctest::Approx(1.0 / 3));
  Mat<double> same(4, 2);
  same << 1, 2, 1, 2, 1, 2, 1, 2;
  const auto uni = score_label_words<double>(e, same);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(uni(i) == doctest::Approx(0.25));
}

TEST_CASE("loss examples") {
  CHECK(loss<double>({1.0, 0.0, 0.0}, StanceLabel::Favor) == 0.0);
  CHECK(loss<double>({1.0 / 3, 1.0 / 3, 1.0 / 3}, StanceLabel::None) == doctest::Approx(std::log(3.0)));
  CHECK(loss<double>({0.25, 0.5, 0.25}, StanceLabel::Favor) == doctest::Approx(std::log(4.0)));
  CHECK(loss<double>({0.0, 1.0, 0.0}, StanceLabel::Favor) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("head gradients: float analytic versus double finite differences") {
  for (LabelScoring scoring : {LabelScoring::WordSoftmax, LabelScoring::LabelMeanEmbedding}) {
    for (verbalizer::Aggregation agg : {verbalizer::Aggregation::Sum, verbalizer::Aggregation::Mean}) {
      const HeadOptions opts{agg, scoring};
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 31 + 5);
        const auto d = static_cast<Eigen::Index>(2 + rng.below(7));
        const auto gamma = static_cast<Eigen::Index>(1 + rng.below(3));
        const auto m = static_cast<std::size_t>(3 + rng.below(5));
        const Mat<double> R = random_mat<double>(rng, gamma, d);
        const RowVec<double> h = random_mat<double>(rng, 1, d).row(0);
        const Mat<double> U = random_mat<double>(rng, static_cast<Eigen::Index>(m), d);
        const auto labels = random_labels(rng, m);
        const StanceLabel y = kAllLabels[rng.below(kNumLabels)];

        const Mat<float> Rf = R.cast<float>();
        const RowVec<float> hf = h.cast<float>();
        const Mat<float> Uf = U.cast<float>();
        const auto fwd = head_forward<float>(Rf, hf, Uf, labels, opts);
        const auto g = head_backward<float>(fwd, Rf, hf, Uf, labels, y, opts);

        auto L = [&](const Mat<double>& R_, const RowVec<double>& h_, const Mat<double>& U_) {
          return loss<double>(head_forward<double>(R_, h_, U_, labels, opts).yhat, y);
        };
        const double eps = 1e-6;
        Mat<double> num_h(1, d);
        for (Eigen::Index i = 0; i < d; ++i) {
          RowVec<double> a = h, b = h;
          a(i) += eps;
          b(i) -= eps;
          num_h(0, i) = (L(R, a, U) - L(R, b, U)) / (2 * eps);
        }
        Mat<double> num_U(U.rows(), d);
        for (Eigen::Index i = 0; i < U.size(); ++i) {
          Mat<double> a = U, b = U;
          a.data()[i] += eps;
          b.data()[i] -= eps;
          num_U.data()[i] = (L(R, h, a) - L(R, h, b)) / (2 * eps);
        }
        Mat<double> num_R(gamma, d);
        for (Eigen::Index i = 0; i < R.size(); ++i) {
          Mat<double> a = R, b = R;
          a.data()[i] += eps;
          b.data()[i] -= eps;
          num_R.data()[i] = (L(a, h, U) - L(b, h, U)) / (2 * eps);
        }
        INFO("seed ", seed, " scoring ", to_string(scoring), " agg ", verbalizer::to_string(agg));
        const Mat<double> gh = g.dh.cast<double>();
        CHECK(rel_error(gh, num_h) <= 1e-4);
        CHECK(rel_error(g.dU.cast<double>(), num_U) <= 1e-4);
        CHECK(rel_error(g.dR.cast<double>(), num_R) <= 1e-4);
      }
    }
  }
}

TEST_CASE("permutation equivariance") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index gamma = 2 + static_cast<Eigen::Index>(rng.below(6));
    const Eigen::Index d = 4;
    const Mat<double> R = random_mat<double>(rng, gamma, d);
    const RowVec<double> h = random_mat<double>(rng, 1, d).row(0);
    const Mat<double> U = random_mat<double>(rng, 5, d);
    const auto labels = random_labels(rng, 5);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(gamma));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Mat<double> P(gamma, d);
    for (Eigen::Index i = 0; i < gamma; ++i) P.row(i) = R.row(perm[static_cast<std::size_t>(i)]);
    const auto a = head_forward<double>(R, h, U, labels, {});
    const auto b = head_forward<double>(P, h, U, labels, {});
    for (Eigen::Index i = 0; i < gamma; ++i) REQUIRE(std::abs(b.fused.alpha(i) - a.fused.alpha(perm[static_cast<std::size_t>(i)])) < 1e-9);
    REQUIRE((a.fused.e - b.fused.e).norm() < 1e-9);
    REQUIRE((a.delta - b.delta).norm() < 1e-9);
    for (std::size_t c = 0; c < kNumLabels; ++c) REQUIRE(std::abs(a.yhat[c] - b.yhat[c]) < 1e-9);
  }
}

TEST_CASE("build_prompt fills the template and respects the budget") {
  const auto bb = testing::tiny_backbone(1, {"donald trump personal characteristics the tweet mocks him"});
  const auto x = example("t1", "Trump is a clown", "Donald Trump");
  const auto k = nle("t1", 0, "Personal characteristics", "The tweet mocks him");
  const auto p = build_prompt(x, &k, bb.tokenizer, 96);
  CHECK(p.filled_text ==
        "Trump is a clown. From the perspective of Personal characteristics and The tweet mocks him. The attitude to Donald Trump is [MASK].");
  CHECK(p.token_ids[static_cast<std::size_t>(p.mask_position)] == bb.tokenizer.mask_id());
  CHECK_FALSE(p.truncation.truncated());

  const auto reduced = build_prompt(x, nullptr, bb.tokenizer, 96);
  CHECK(reduced.filled_text == "Trump is a clown. The attitude to Donald Trump is [MASK].");

  std::string long_k;
  for (int i = 0; i < 200; ++i) long_k += "the tweet mocks him ";
  const auto big = nle("t1", 2, "Personal characteristics", long_k);
  const auto trimmed = build_prompt(x, &big, bb.tokenizer, 64);
  CHECK(trimmed.token_ids.size() <= 64);
  CHECK(trimmed.truncation.chars_dropped_from_k > 0);
  CHECK(trimmed.truncation.chars_dropped_from_x == 0);
  CHECK(std::count(trimmed.token_ids.begin(), trimmed.token_ids.end(), bb.tokenizer.mask_id()) == 1);
  CHECK(trimmed.filled_text.starts_with("Trump is a clown. From the perspective of Personal characteristics and the tweet"));
  CHECK(trimmed.filled_text.ends_with(". The attitude to Donald Trump is [MASK]."));
  CHECK(trimmed.perspective_index == 2);

  // Oversized text as well: the explanation empties first, then x is trimmed.
  std::string long_x;
  for (int i = 0; i < 100; ++i) long_x += "clown ";
  const auto both = build_prompt(example("t2", long_x, "Donald Trump"), &big, bb.tokenizer, 40);
  CHECK(both.token_ids.size() <= 40);
  CHECK(both.truncation.chars_dropped_from_k == text::codepoint_count(long_k));
  CHECK(both.truncation.chars_dropped_from_x > 0);

  CHECK_THROWS_AS(build_prompt(x, &k, bb.tokenizer, 12), Error);

  // A literal mask inside the input cannot create a second mask slot.
  const auto sneaky = build_prompt(example("t3", "I [MASK] this", "Donald Trump"), &k, bb.tokenizer, 96);
  CHECK(std::count(sneaky.token_ids.begin(), sneaky.token_ids.end(), bb.tokenizer.mask_id()) == 1);
}

TEST_CASE("encode_mask_vectors shape, determinism and sensitivity") {
  const auto model = StanceModel::initialize(testing::tiny_backbone(2, {"donald trump economy policy"}), verbalizer::base_verbalizer(), {}, 9);
  const auto x = example("t1", "Trump on the economy", "Donald Trump");
  const auto k1 = nle("t1", 0, "economy", "policy");
  const auto k2 = nle("t1", 1, "policy", "policy");
  const auto p1 = build_prompt(x, &k1, model.tokenizer(), 96);
  const auto p2 = build_prompt(x, &k2, model.tokenizer(), 96);
  const std::vector<PromptInstance> same = {p1, p1, p1};
  const auto R = model.encode_mask_vectors(same);
  CHECK(R.vectors.rows() == 3);
  CHECK(R.vectors.cols() == model.hidden_size());
  CHECK(R.vectors.row(0) == R.vectors.row(2));
  CHECK(R.vectors.allFinite());
  const std::vector<PromptInstance> differ = {p1, p2};
  const auto D = model.encode_mask_vectors(differ);
  CHECK((D.vectors.row(0) - D.vectors.row(1)).norm() > 1e-6);

  auto bad = p1;
  bad.mask_position = 0;
  CHECK_THROWS_AS(model.encode_mask_vectors(std::vector<PromptInstance>{bad}), Error);
  auto other = p2;
  other.example_id = "t9";
  CHECK_THROWS_AS(model.encode_mask_vectors(std::vector<PromptInstance>{p1, other}), Error);
}

TEST_CASE("reduction: gamma 1 with the base verbalizer equals direct single-prompt prediction") {
  for (int fixture = 0; fixture < 50; ++fixture) {
    const auto model =
        StanceModel::initialize(testing::tiny_backbone(100 + fixture, {"some text about a target"}), verbalizer::base_verbalizer(), {},
                                static_cast<std::uint64_t>(fixture));
    Rng rng(static_cast<std::uint64_t>(fixture));
    const std::vector<std::string> words = {"some", "text", "about", "a", "target", "agree", "oppose"};
    std::string text;
    for (int i = 0; i < 6; ++i) text += words[rng.below(words.size())] + " ";
    const auto x = example("e", text, "target");
    const auto k = nle("e", 0, "about", "some text");
    const auto inst = build_prompt(x, fixture % 2 == 0 ? &k : nullptr, model.tokenizer(), 96);
    const auto pred = model.predict(std::vector<PromptInstance>{inst});

    // Direct computation: softmax over the three label-word embeddings dotted
    // with the [MASK] hidden state, in double.
    const Mat<float> hidden = model.encoder().forward(inst.token_ids, nullptr);
    const Eigen::RowVectorXd r = hidden.row(inst.mask_position).cast<double>();
    std::array<double, 3> logits{};
    for (StanceLabel label : kAllLabels) {
      const int id = *model.tokenizer().token_id(base_word(label));
      logits[index_of(label)] = model.encoder().weights().word_emb.row(id).cast<double>().dot(r);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    for (std::size_t c = 0; c < kNumLabels; ++c) REQUIRE(std::abs(pred.yhat[c] - std::exp(logits[c] - mx) / z) < 1e-6);
    REQUIRE(pred.alpha.size() == 1);
  }
}

TEST_CASE("constructed alignment fixture predicts FAVOR") {
  auto model = StanceModel::initialize(testing::tiny_backbone(5), verbalizer::base_verbalizer(), {}, 1);
  const auto inst = build_prompt(example("e", "x", "target"), nullptr, model.tokenizer(), 96);
  const Mat<float> hidden = model.encoder().forward(inst.token_ids, nullptr);
  // Align the FAVOR word embedding with the mask vector and push the others away.
  auto& emb = model.encoder().weights().word_emb;
  emb.row(*model.tokenizer().token_id("favor")) = 3.0f * hidden.row(inst.mask_position);
  emb.row(*model.tokenizer().token_id("against")) = -hidden.row(inst.mask_position);
  emb.row(*model.tokenizer().token_id("none")) = -hidden.row(inst.mask_position);
  const auto pred = model.predict(std::vector<PromptInstance>{inst});
  CHECK(pred.label == StanceLabel::Favor);
  CHECK(pred.yhat[0] + pred.yhat[1] + pred.yhat[2] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("model gradients through the encoder match finite differences") {
  // Whole-model check in float against a central difference on h and on a
  // label-word embedding row, loose tolerance for float precision.
  auto model = StanceModel::initialize(testing::tiny_backbone(11, {"alpha beta gamma"}), verbalizer::expand(verbalizer::base_verbalizer(), {}, 0),
                                       {}, 3);
  const auto x = example("e", "alpha beta", "gamma");
  const auto k0 = nle("e", 0, "alpha", "beta");
  const auto k1 = nle("e", 1, "beta", "gamma alpha");
  const std::vector<PromptInstance> inst = {build_prompt(x, &k0, model.tokenizer(), 96), build_prompt(x, &k1, model.tokenizer(), 96)};
  auto grads = model.zero_grads();
  model.accumulate_gradients(inst, StanceLabel::Against, {}, 1.0f, grads);
  auto L = [&]() {
    const auto p = model.predict(inst);
    return -std::log(p.yhat[1]);
  };
  const float eps = 1e-2f;
  for (Eigen::Index i = 0; i < 4; ++i) {
    float& hv = model.query()(0, i);
    const float orig = hv;
    hv = orig + eps;
    const double up = L();
    hv = orig - eps;
    const double down = L();
    hv = orig;
    CHECK(grads.h(0, i) == doctest::Approx((up - down) / (2 * eps)).epsilon(2e-2));
  }
  const int fav = *model.tokenizer().token_id("favor");
  for (Eigen::Index j = 0; j < 4; ++j) {
    float& w = model.encoder().weights().word_emb(fav, j);
    const float orig = w;
    w = orig + eps;
    const double up = L();
    w = orig - eps;
    const double down = L();
    w = orig;
    CHECK(grads.encoder.word_emb(fav, j) == doctest::Approx((up - down) / (2 * eps)).epsilon(2e-2));
  }
}

TEST_CASE("checkpoint round-trip reproduces predictions") {
  const auto tmp = std::filesystem::temp_directory_path() / "mppt_test_ckpt";
  std::filesystem::remove_all(tmp);
  const auto lex = verbalizer::parse_lexicon("word\trelated\nfavor\thappily,pleased\nagainst\toppose\nnone\tneutral\n");
  ModelOptions opts;
  opts.head.aggregation = verbalizer::Aggregation::Mean;
  const auto model = StanceModel::initialize(testing::tiny_backbone(4), verbalizer::expand(verbalizer::base_verbalizer(), lex, 2), opts, 12);
  model.save(tmp);
  const auto again = StanceModel::load(tmp);
  CHECK(again.units().units.size() == model.units().units.size());
  CHECK(again.options().head.aggregation == verbalizer::Aggregation::Mean);
  CHECK(again.query_seed() == 12);
  const auto x = example("e", "happily oppose", "favor");
  const auto k = nle("e", 0, "neutral", "pleased");
  const std::vector<PromptInstance> inst = {build_prompt(x, &k, model.tokenizer(), 96)};
  const auto a = model.predict(inst);
  const auto b = again.predict(inst);
  for (std::size_t c = 0; c < kNumLabels; ++c) CHECK(a.yhat[c] == b.yhat[c]);
  std::filesystem::remove_all(tmp);
}

TEST_CASE("AdamW: decreases a quadratic, clips, and round-trips state") {
  Mat<float> w = Mat<float>::Constant(1, 3, 5.0f);
  Mat<float> g = Mat<float>::Zero(1, 3);
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0, 1.0});
  const std::vector<ParamRef> params = {{"w", &w, &g, true}};
  for (int i = 0; i < 200; ++i) {
    g = 2.0f * w;
    opt.step(params);
  }
  CHECK(w.norm() < 0.5);
  g = Mat<float>::Constant(1, 3, 100.0f);
  CHECK(opt.step(params) == doctest::Approx(std::sqrt(3.0) * 100).epsilon(1e-5));

  const auto tmp = std::filesystem::temp_directory_path() / "mppt_test_opt";
  opt.save(tmp);
  AdamW loaded;
  loaded.load(tmp);
  CHECK(loaded.steps() == opt.steps());
  Mat<float> w2 = w;
  Mat<float> g2 = g;
  opt.step(params);
  loaded.step({{"w", &w2, &g2, true}});
  CHECK(w == w2);
  std::filesystem::remove_all(tmp);

  // lr = 0 leaves parameters unchanged.
  Mat<float> z = Mat<float>::Constant(2, 2, 1.5f);
  Mat<float> gz = Mat<float>::Ones(2, 2);
  AdamW none({0.0, 0.9, 0.999, 1e-8, 0.01, 1.0});
  none.step({{"z", &z, &gz, true}});
  CHECK(z == Mat<float>::Constant(2, 2, 1.5f));
}

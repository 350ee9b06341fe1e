#include "mppt/model.hpp"

#include <cmath>

#include "mppt/common.hpp"
#include "mppt/safetensors.hpp"
#include "mppt/util.hpp"

namespace mppt::multipln {

using nlohmann::json;

json ModelOptions::to_json() const {
  return {{"max_seq_len", max_seq_len},
          {"aggregation", verbalizer::to_string(head.aggregation)},
          {"label_scoring", to_string(head.scoring)},
          {"freeze_label_embeddings", freeze_label_embeddings}};
}

ModelOptions ModelOptions::from_json(const json& j) {
  ModelOptions o;
  o.max_seq_len = j.value("max_seq_len", o.max_seq_len);
  o.head.aggregation = verbalizer::parse_aggregation(j.value("aggregation", std::string("sum")));
  o.head.scoring = parse_label_scoring(j.value("label_scoring", std::string("word_softmax")));
  o.freeze_label_embeddings = j.value("freeze_label_embeddings", false);
  return o;
}

StanceModel::StanceModel(Backbone backbone, verbalizer::Verbalizer verbalizer, verbalizer::MaterializedVerbalizer units, Mat<float> h,
                         std::uint64_t h_seed, ModelOptions options)
    : identity_(std::move(backbone.identity)),
      encoder_(std::move(backbone.config), std::move(backbone.weights)),
      tokenizer_(std::move(backbone.tokenizer)),
      verbalizer_(std::move(verbalizer)),
      units_(std::move(units)),
      h_(std::move(h)),
      h_seed_(h_seed),
      options_(options) {
  if (h_.rows() != 1 || h_.cols() != encoder_.config().hidden_size) {
    throw Error(ErrorCode::InvalidConfig, "attention query dimension does not match the backbone hidden size");
  }
  if (options_.max_seq_len > encoder_.config().max_position_embeddings) {
    throw Error(ErrorCode::InvalidConfig, "max_seq_len exceeds the backbone's max_position_embeddings");
  }
  if (units_.units.empty()) throw Error(ErrorCode::InvalidConfig, "verbalizer has no units");
}

StanceModel StanceModel::initialize(Backbone backbone, const verbalizer::Verbalizer& verbalizer, const ModelOptions& options,
                                    std::uint64_t seed) {
  auto units = verbalizer::materialize(verbalizer, backbone.tokenizer);
  Rng rng = Rng::stream(seed, "h-init");
  Mat<float> h(1, backbone.config.hidden_size);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = static_cast<float>(backbone.config.initializer_range * rng.normal());
  return StanceModel(std::move(backbone), verbalizer, std::move(units), std::move(h), seed, options);
}

MaskVectorSet StanceModel::encode_mask_vectors(std::span<const PromptInstance> instances, DropoutContext dropout,
                                               std::vector<EncoderCache<float>>* caches) const {
  if (instances.empty()) throw Error(ErrorCode::InvalidArgument, "no prompt instances");
  MaskVectorSet out;
  out.example_id = instances.front().example_id;
  out.vectors.resize(static_cast<Eigen::Index>(instances.size()), hidden_size());
  if (caches != nullptr) caches->assign(instances.size(), {});
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    if (inst.example_id != out.example_id) throw Error(ErrorCode::InvalidArgument, "prompt instances mix examples");
    if (static_cast<int>(inst.token_ids.size()) > options_.max_seq_len) {
      throw Error(ErrorCode::SequenceOverflow, "prompt for " + inst.example_id + " exceeds max_seq_len");
    }
    if (inst.mask_position < 0 || inst.mask_position >= static_cast<int>(inst.token_ids.size()) ||
        inst.token_ids[static_cast<std::size_t>(inst.mask_position)] != tokenizer_.mask_id()) {
      throw Error(ErrorCode::InvalidArgument, "invalid mask position for " + inst.example_id);
    }
    const Mat<float> hidden = encoder_.forward(inst.token_ids, caches ? &(*caches)[i] : nullptr, dropout);
    out.vectors.row(static_cast<Eigen::Index>(i)) = hidden.row(inst.mask_position);
  }
  return out;
}

Prediction StanceModel::predict(std::span<const PromptInstance> instances) const {
  const MaskVectorSet R = encode_mask_vectors(instances);
  const Mat<float> U = unit_embeddings(units_, encoder_.weights().word_emb);
  const RowVec<float> h = h_.row(0);
  const auto fwd = head_forward<float>(R.vectors, h, U, units_.labels(), options_.head);
  Prediction p;
  p.example_id = R.example_id;
  for (std::size_t c = 0; c < kNumLabels; ++c) p.yhat[c] = fwd.yhat[c];
  p.label = argmax_label(p.yhat);
  p.alpha.assign(fwd.fused.alpha.data(), fwd.fused.alpha.data() + fwd.fused.alpha.size());
  p.delta.assign(fwd.delta.data(), fwd.delta.data() + fwd.delta.size());
  return p;
}

double StanceModel::accumulate_gradients(std::span<const PromptInstance> instances, StanceLabel y, DropoutContext dropout, float scale,
                                         ModelGrads& grads) const {
  std::vector<EncoderCache<float>> caches;
  const MaskVectorSet R = encode_mask_vectors(instances, dropout, &caches);
  const Mat<float> U = unit_embeddings(units_, encoder_.weights().word_emb);
  const RowVec<float> h = h_.row(0);
  const auto labels = units_.labels();
  const auto fwd = head_forward<float>(R.vectors, h, U, labels, options_.head);
  const double value = loss(fwd.yhat, y);
  if (!std::isfinite(value)) return value;
  const auto g = head_backward<float>(fwd, R.vectors, h, U, labels, y, options_.head);

  grads.h.row(0) += scale * g.dh;
  if (!options_.freeze_label_embeddings) {
    const Mat<float> dU = scale * g.dU;
    scatter_unit_grads(units_, dU, grads.encoder.word_emb);
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    Mat<float> d_out = Mat<float>::Zero(static_cast<Eigen::Index>(instances[i].token_ids.size()), hidden_size());
    d_out.row(instances[i].mask_position) = scale * g.dR.row(static_cast<Eigen::Index>(i));
    encoder_.backward(caches[i], d_out, grads.encoder);
  }
  return value;
}

ModelGrads StanceModel::zero_grads() const {
  return {EncoderWeights<float>::zeros(encoder_.config()), Mat<float>::Zero(1, hidden_size())};
}

std::vector<ParamRef> StanceModel::parameters(ModelGrads& grads) {
  std::vector<ParamRef> out;
  encoder_.weights().visit([&](const std::string& name, Mat<float>& m, ParamKind kind) {
    out.push_back({name, &m, nullptr, kind == ParamKind::Embedding || kind == ParamKind::Linear});
  });
  std::size_t i = 0;
  grads.encoder.visit([&](const std::string&, Mat<float>& m, ParamKind) { out[i++].grad = &m; });
  out.push_back({"query.h", &h_, &grads.h, false});
  return out;
}

std::vector<int> StanceModel::label_token_ids() const {
  std::vector<int> ids;
  for (const auto& u : units_.units) ids.insert(ids.end(), u.token_ids.begin(), u.token_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

void StanceModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_backbone(dir / "backbone", Backbone{identity_, encoder_.config(), encoder_.weights(), tokenizer_});
  Tensor h;
  h.shape = {h_.cols()};
  h.data.assign(h_.data(), h_.data() + h_.size());
  write_safetensors(dir / "query.safetensors", {{"h", h}});
  json vj;
  vj["verbalizer"] = verbalizer_.to_json();
  vj["units"] = units_.to_json(tokenizer_);
  write_file_atomic(dir / "verbalizer.json", vj.dump(2) + "\n");
  json mj;
  mj["backbone_identity"] = identity_;
  mj["query_seed"] = h_seed_;
  mj["options"] = options_.to_json();
  write_file_atomic(dir / "model.json", mj.dump(2) + "\n");
}

StanceModel StanceModel::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, "checkpoint " + dir.string() + " does not exist");
  Backbone bb = load_backbone(dir / "backbone");
  const json mj = json::parse(read_file(dir / "model.json"));
  bb.identity = mj.value("backbone_identity", bb.identity);
  const json vj = json::parse(read_file(dir / "verbalizer.json"));

  verbalizer::Verbalizer v;
  v.expansion_limit = vj.at("verbalizer").value("expansion_limit", 0);
  verbalizer::MaterializedVerbalizer units;
  for (StanceLabel label : kAllLabels) {
    v.words[index_of(label)] = vj.at("verbalizer").at("words").at(to_string(label)).get<std::vector<std::string>>();
    for (const auto& u : vj.at("units").at(to_string(label))) {
      units.units.push_back({u.at("word").get<std::string>(), label, u.at("token_ids").get<std::vector<int>>()});
    }
  }
  const auto tensors = read_safetensors(dir / "query.safetensors");
  const Tensor& t = tensors.at("h");
  Mat<float> h = Eigen::Map<const Mat<float>>(t.data.data(), 1, static_cast<Eigen::Index>(t.data.size()));
  return StanceModel(std::move(bb), std::move(v), std::move(units), std::move(h), mj.value("query_seed", std::uint64_t{0}),
                     ModelOptions::from_json(mj.at("options")));
}

}  // namespace mppt::multipln

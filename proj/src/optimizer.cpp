#include "mppt/optimizer.hpp"

#include <cmath>

#include "json.hpp"
#include "mppt/safetensors.hpp"
#include "mppt/util.hpp"

namespace mppt {

using nlohmann::json;

double AdamW::step(const std::vector<multipln::ParamRef>& params) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad->template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  const double clip = options_.max_grad_norm > 0.0 && norm > options_.max_grad_norm ? options_.max_grad_norm / (norm + 1e-6) : 1.0;

  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  const auto b1 = static_cast<float>(options_.beta1);
  const auto b2 = static_cast<float>(options_.beta2);
  const auto step_size = static_cast<float>(options_.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(options_.eps);
  const auto decay = static_cast<float>(1.0 - options_.lr * options_.weight_decay);

  for (const auto& p : params) {
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    if (m.size() == 0) {
      m = Mat<float>::Zero(p.value->rows(), p.value->cols());
      v = Mat<float>::Zero(p.value->rows(), p.value->cols());
    }
    const Mat<float> g = *p.grad * static_cast<float>(clip);
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    if (p.decay) *p.value *= decay;
    p.value->array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
  return norm;
}

void AdamW::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  TensorMap tensors;
  auto put = [&](const std::string& prefix, const std::map<std::string, Mat<float>>& moments) {
    for (const auto& [name, mat] : moments) {
      Tensor t;
      t.shape = {mat.rows(), mat.cols()};
      t.data.assign(mat.data(), mat.data() + mat.size());
      tensors.emplace(prefix + name, std::move(t));
    }
  };
  put("m.", m_);
  put("v.", v_);
  write_safetensors(dir / "optimizer.safetensors", tensors);
  const json j = {{"name", "AdamW"},
                  {"step", step_},
                  {"lr", options_.lr},
                  {"beta1", options_.beta1},
                  {"beta2", options_.beta2},
                  {"eps", options_.eps},
                  {"weight_decay", options_.weight_decay},
                  {"max_grad_norm", options_.max_grad_norm}};
  write_file_atomic(dir / "optimizer.json", j.dump(2) + "\n");
}

void AdamW::load(const std::filesystem::path& dir) {
  const json j = json::parse(read_file(dir / "optimizer.json"));
  step_ = j.at("step").get<std::int64_t>();
  options_.lr = j.value("lr", options_.lr);
  options_.beta1 = j.value("beta1", options_.beta1);
  options_.beta2 = j.value("beta2", options_.beta2);
  options_.eps = j.value("eps", options_.eps);
  options_.weight_decay = j.value("weight_decay", options_.weight_decay);
  options_.max_grad_norm = j.value("max_grad_norm", options_.max_grad_norm);
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : read_safetensors(dir / "optimizer.safetensors")) {
    Mat<float> mat = Eigen::Map<const Mat<float>>(t.data.data(), static_cast<Eigen::Index>(t.shape.at(0)),
                                                  static_cast<Eigen::Index>(t.shape.at(1)));
    if (name.starts_with("m.")) m_[name.substr(2)] = std::move(mat);
    if (name.starts_with("v.")) v_[name.substr(2)] = std::move(mat);
  }
}

}  // namespace mppt

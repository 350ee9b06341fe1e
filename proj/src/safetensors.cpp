#include "mppt/safetensors.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"
#include "mppt/common.hpp"
#include "mppt/util.hpp"

namespace mppt {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits = 0;
  if (exp == 0) {
    if (mant != 0) {
      // Subnormal: renormalize.
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3FFu;
      bits = sign | (exp << 23) | (mant << 13);
    } else {
      bits = sign;
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string strip_prefix(const std::string& name) {
  constexpr std::string_view prefix = "bert.";
  return name.starts_with(prefix) ? name.substr(prefix.size()) : name;
}

// Legacy checkpoints name LayerNorm parameters gamma/beta.
std::string legacy_alias(const std::string& name) {
  if (name.ends_with("LayerNorm.weight")) return name.substr(0, name.size() - 6) + "gamma";
  if (name.ends_with("LayerNorm.bias")) return name.substr(0, name.size() - 4) + "beta";
  return name;
}

}  // namespace

TensorMap read_safetensors(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw Error(ErrorCode::Io, path.string() + ": truncated safetensors file");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) throw Error(ErrorCode::Io, path.string() + ": header length exceeds file size");
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": bad header: " + e.what());
  }
  const char* data = bytes.data() + 8 + header_len;
  const std::size_t data_size = bytes.size() - 8 - header_len;

  TensorMap out;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") continue;
    Tensor t;
    t.shape = info.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
    const std::string dtype = info.at("dtype").get<std::string>();
    if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size) {
      throw Error(ErrorCode::Io, path.string() + ": bad offsets for " + name);
    }
    const auto n = static_cast<std::size_t>(element_count(t.shape));
    const std::size_t span = offsets[1] - offsets[0];
    const char* src = data + offsets[0];
    t.data.resize(n);
    if (dtype == "F32") {
      if (span != n * 4) throw Error(ErrorCode::Io, path.string() + ": size mismatch for " + name);
      std::memcpy(t.data.data(), src, span);
    } else if (dtype == "F16" || dtype == "BF16") {
      if (span != n * 2) throw Error(ErrorCode::Io, path.string() + ": size mismatch for " + name);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t h = 0;
        std::memcpy(&h, src + 2 * i, 2);
        t.data[i] = dtype == "F16" ? half_to_float(h) : std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
      }
    } else {
      // Integer buffers (e.g. position_ids) are not parameters.
      continue;
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors, const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (static_cast<std::size_t>(element_count(t.shape)) != t.data.size()) {
      throw Error(ErrorCode::InvalidArgument, "tensor " + name + " shape does not match its data");
    }
    const std::size_t bytes = t.data.size() * 4;
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string header_text = header.dump();
  while ((8 + header_text.size()) % 8 != 0) header_text.push_back(' ');
  std::string out(8, '\0');
  const std::uint64_t len = header_text.size();
  std::memcpy(out.data(), &len, 8);
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors) out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
  write_file_atomic(path, out);
}

template <typename T>
TensorMap export_weights(const EncoderWeights<T>& weights) {
  TensorMap out;
  weights.visit([&](const std::string& name, const Mat<T>& m, ParamKind kind) {
    Tensor t;
    if (kind == ParamKind::Linear) {
      Mat<float> tr = m.transpose().template cast<float>();
      t.shape = {tr.rows(), tr.cols()};
      t.data.assign(tr.data(), tr.data() + tr.size());
    } else {
      Mat<float> f = m.template cast<float>();
      if (f.rows() == 1) {
        t.shape = {f.cols()};
      } else {
        t.shape = {f.rows(), f.cols()};
      }
      t.data.assign(f.data(), f.data() + f.size());
    }
    out.emplace(name, std::move(t));
  });
  return out;
}

template <typename T>
std::vector<std::string> import_weights(const TensorMap& tensors, EncoderWeights<T>& weights) {
  // Index by unprefixed name so both BertForMaskedLM and BertModel layouts resolve.
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) {
    by_name[strip_prefix(name)] = &t;
    by_name[legacy_alias(strip_prefix(name))] = &t;
  }
  std::vector<std::string> missing_head;
  weights.visit([&](const std::string& full_name, Mat<T>& m, ParamKind kind) {
    const std::string name = strip_prefix(full_name);
    auto it = by_name.find(name);
    if (it == by_name.end()) it = by_name.find(legacy_alias(name));
    if (it == by_name.end()) {
      if (name.starts_with("cls.")) {
        missing_head.push_back(full_name);
        return;
      }
      throw Error(ErrorCode::InvalidConfig, "checkpoint lacks tensor " + full_name);
    }
    const Tensor& t = *it->second;
    const Eigen::Index rows = kind == ParamKind::Linear ? m.cols() : m.rows();
    const Eigen::Index cols = kind == ParamKind::Linear ? m.rows() : m.cols();
    const bool shape_ok = (t.shape.size() == 2 && t.shape[0] == rows && t.shape[1] == cols) ||
                          (t.shape.size() == 1 && rows == 1 && t.shape[0] == cols);
    if (!shape_ok) throw Error(ErrorCode::InvalidConfig, "shape mismatch for tensor " + full_name);
    Eigen::Map<const Mat<float>> src(t.data.data(), rows, cols);
    if (kind == ParamKind::Linear) {
      m = src.transpose().template cast<T>();
    } else {
      m = src.template cast<T>();
    }
  });
  return missing_head;
}

template TensorMap export_weights<float>(const EncoderWeights<float>&);
template TensorMap export_weights<double>(const EncoderWeights<double>&);
template std::vector<std::string> import_weights<float>(const TensorMap&, EncoderWeights<float>&);
template std::vector<std::string> import_weights<double>(const TensorMap&, EncoderWeights<double>&);

}  // namespace mppt

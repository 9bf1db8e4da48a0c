#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/tensor.hpp"
#include "pcl_forge/nn/params.hpp"

namespace pclf::train {

// Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
// then every tensor listed in the header as little-endian float32, in order.
inline constexpr char kCheckpointMagic[8] = {'P', 'C', 'L', 'F', 'C', 'K', 'P', '1'};

struct CheckpointTensor {
  std::string name;
  std::vector<int> shape;
  std::string group;  // "param", "buffer" or "momentum"
  std::vector<float> data;
};

struct Checkpoint {
  long long step = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name, const std::string& group) const {
    for (const auto& t : tensors)
      if (t.name == name && t.group == group) return &t;
    return nullptr;
  }
};

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f32_le(std::ostream& os, const std::vector<float>& data) {
  std::vector<unsigned char> buf(data.size() * 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(data[i]);
    for (int k = 0; k < 4; ++k) buf[i * 4 + static_cast<std::size_t>(k)] = static_cast<unsigned char>(u >> (8 * k));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<float> read_f32_le(std::istream& is, std::size_t n) {
  std::vector<unsigned char> buf(n * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw IoError("checkpoint payload truncated");
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(buf[i * 4 + static_cast<std::size_t>(k)]) << (8 * k);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : ck.tensors) {
    PCLF_REQUIRE(Tensor<float>::count(t.shape) == t.data.size(), InvalidArgument, "checkpoint: shape/data mismatch for " + t.name);
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"group", t.group}, {"dtype", "float32"}});
  }
  const nlohmann::json header = {{"format", "pcl-forge checkpoint"}, {"version", 1}, {"step", ck.step},
                                 {"config", ck.config}, {"tensors", entries}};
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 8);
    detail::write_u64_le(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ck.tensors) detail::write_f32_le(os, t.data);
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint: " + path.string());
  const std::uint64_t len = detail::read_u64_le(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("checkpoint header truncated: " + path.string());
  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.step = header.at("step").get<long long>();
  ck.config = header.at("config");
  for (const auto& e : header.at("tensors")) {
    CheckpointTensor t;
    t.name = e.at("name").get<std::string>();
    t.shape = e.at("shape").get<std::vector<int>>();
    t.group = e.at("group").get<std::string>();
    if (e.at("dtype").get<std::string>() != "float32") throw IoError("unsupported dtype in " + path.string());
    t.data = detail::read_f32_le(is, Tensor<float>::count(t.shape));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

template <typename T>
void store_params(Checkpoint& ck, const nn::ParamStore<T>& params) {
  for (const auto& p : params) {
    CheckpointTensor t{p->name, p->value.shape(), p->trainable ? "param" : "buffer", {}};
    t.data.assign(p->value.values().begin(), p->value.values().end());
    ck.tensors.push_back(std::move(t));
  }
}

template <typename T>
void store_momentum(Checkpoint& ck, const std::map<std::string, Tensor<T>>& state) {
  for (const auto& [name, v] : state) {
    CheckpointTensor t{name, v.shape(), "momentum", {}};
    t.data.assign(v.values().begin(), v.values().end());
    ck.tensors.push_back(std::move(t));
  }
}

// Loads every model tensor; all names and shapes must match.
template <typename T>
void load_params(const Checkpoint& ck, nn::ParamStore<T>& params) {
  for (auto& p : params) {
    const auto* t = ck.find(p->name, p->trainable ? "param" : "buffer");
    PCLF_REQUIRE(t != nullptr, InvalidArgument, "checkpoint lacks parameter " + p->name);
    PCLF_REQUIRE(t->shape == p->value.shape(), InvalidArgument, "checkpoint shape mismatch for " + p->name);
    auto dst = p->value.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->data[i]);
  }
}

template <typename T>
void load_momentum(const Checkpoint& ck, std::map<std::string, Tensor<T>>& state) {
  state.clear();
  for (const auto& t : ck.tensors) {
    if (t.group != "momentum") continue;
    Tensor<T> v(t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i) v[i] = static_cast<T>(t.data[i]);
    state.emplace(t.name, std::move(v));
  }
}

}  // namespace pclf::train

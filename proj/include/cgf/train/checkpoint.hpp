#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cgf/data/raster.hpp"
#include "cgf/nn/params.hpp"

namespace cgf::train {

inline constexpr char kCheckpointMagic[4] = {'C', 'G', 'F', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little endian):
//   "CGF1", u32 version, u32 n, n bytes of JSON config echo,
//   u32 count, then per tensor: u32 name length, name bytes,
//   u32 rank, rank x u32 dims, f32 values.
struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  using data::detail::put_f32;
  using data::detail::put_u32;
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  const std::string cfg = ck.config.dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.dim()));
    for (std::size_t a = 0; a < t.dim(); ++a) put_u32(out, static_cast<std::uint32_t>(t.size(a)));
    for (float v : t.data()) put_f32(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint") {
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) throw FormatError(FormatError::Kind::truncated, origin + ": truncated " + what);
  };
  auto u32 = [&](const char* what) {
    need(4, what);
    const std::uint32_t v = data::detail::get_u32(bytes.data() + pos);
    pos += 4;
    return v;
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::bad_magic, origin + ": bad magic (expected CGF1)");
  }
  pos = 4;
  const std::uint32_t version = u32("header");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::bad_version, origin + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint32_t cfg_len = u32("header");
  need(cfg_len, "config");
  try {
    ck.config = nlohmann::json::parse(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + cfg_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::malformed, origin + ": config is not JSON: " + e.what());
  }
  pos += cfg_len;
  const std::uint32_t count = u32("tensor table");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = u32("tensor name");
    need(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    const std::uint32_t rank = u32("tensor rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      shape.push_back(u32("tensor dims"));
      n *= shape.back();
    }
    need(4 * n, "tensor payload");
    std::vector<float> values(n);
    for (std::size_t k = 0; k < n; ++k) values[k] = data::detail::get_f32(bytes.data() + pos + 4 * k);
    pos += 4 * n;
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (pos != bytes.size()) throw FormatError(FormatError::Kind::malformed, origin + ": trailing bytes after tensor table");
  return ck;
}

inline Checkpoint snapshot(const nn::ParamStore<float>& store, nlohmann::json config) {
  Checkpoint ck{std::move(config), {}};
  for (const auto& e : store.entries()) ck.tensors.emplace_back(e.name, Tensor(e.tensor.shape(), e.tensor.to_vector()));
  return ck;
}

// Copies values into an existing store; names, order and shapes must match.
inline void restore(nn::ParamStore<float>& store, const Checkpoint& ck) {
  const auto& entries = store.entries();
  if (entries.size() != ck.tensors.size()) {
    throw FormatError(FormatError::Kind::malformed, "checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model has " +
                                                        std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = ck.tensors[i];
    if (name != entries[i].name || t.shape() != entries[i].tensor.shape()) {
      throw FormatError(FormatError::Kind::malformed, "checkpoint tensor '" + name + "' " + to_string(t.shape()) + " does not match '" +
                                                          entries[i].name + "' " + to_string(entries[i].tensor.shape()));
    }
    Tensor dst = entries[i].tensor;
    auto d = dst.mutable_data();
    std::copy(t.data().begin(), t.data().end(), d.begin());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) { data::detail::write_bytes(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(data::detail::read_bytes(path), path.string());
}

}  // namespace cgf::train

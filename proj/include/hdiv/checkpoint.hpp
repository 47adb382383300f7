// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint format:
//   magic "HDIV1" | version u32 | entry count u32 |
//   entries: { name length u32, name bytes, dtype u8 (0=f32, 1=f64),
//              rank u8, dims u32 each, raw little-endian values } |
//   CRC-32 of all preceding bytes (u32)
// All integers little-endian. Model checkpoints are self-describing: the
// configuration rides along as scalar "meta.*" entries (always f64) ahead of
// the parameter tensors, whose dtype tag tells the loader which scalar type
// the model was trained in.
#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hdiv/pyramid.hpp"

namespace hdiv {

struct CheckpointEntry {
  std::string name;
  uint8_t dtype = 0;  // 0 = f32, 1 = f64
  Shape dims;
  std::vector<unsigned char> raw;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

inline void put_u32(std::vector<unsigned char>& buf, uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

struct ByteReader {
  const unsigned char* p;
  size_t left;
  void need(size_t n) const {
    if (n > left) throw CheckpointError("checkpoint truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                 (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    p += 4;
    left -= 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    const uint8_t v = *p;
    ++p;
    --left;
    return v;
  }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
};

}  // namespace detail

template <class S>
constexpr uint8_t dtype_tag() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? 0 : 1;
}

inline size_t dtype_size(uint8_t tag) {
  if (tag == 0) return 4;
  if (tag == 1) return 8;
  throw CheckpointError("unknown dtype tag " + std::to_string(tag));
}

template <class S>
CheckpointEntry make_entry(std::string name, Shape dims, const std::vector<S>& values) {
  if (shape_numel(dims) != static_cast<int64_t>(values.size()))
    throw CheckpointError("entry '" + name + "': dims do not match value count");
  CheckpointEntry e;
  e.name = std::move(name);
  e.dtype = dtype_tag<S>();
  e.dims = std::move(dims);
  e.raw.resize(values.size() * sizeof(S));
  std::memcpy(e.raw.data(), values.data(), e.raw.size());
  return e;
}

template <class S>
std::vector<S> entry_values(const CheckpointEntry& e) {
  if (e.dtype != dtype_tag<S>())
    throw CheckpointError("entry '" + e.name + "': dtype mismatch");
  std::vector<S> out(e.raw.size() / sizeof(S));
  std::memcpy(out.data(), e.raw.data(), e.raw.size());
  return out;
}

inline constexpr char kCheckpointMagic[5] = {'H', 'D', 'I', 'V', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const std::string& path,
                             const std::vector<CheckpointEntry>& entries) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 5);
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_u32(buf, static_cast<uint32_t>(e.name.size()));
    buf.insert(buf.end(), e.name.begin(), e.name.end());
    buf.push_back(e.dtype);
    buf.push_back(static_cast<unsigned char>(e.dims.size()));
    int64_t numel = 1;
    for (const int64_t d : e.dims) {
      detail::put_u32(buf, static_cast<uint32_t>(d));
      numel *= d;
    }
    if (e.raw.size() != static_cast<size_t>(numel) * dtype_size(e.dtype))
      throw CheckpointError("entry '" + e.name + "': payload size mismatch");
    buf.insert(buf.end(), e.raw.begin(), e.raw.end());
  }
  const uint32_t crc =
      static_cast<uint32_t>(crc32(crc32(0L, nullptr, 0), buf.data(), static_cast<uInt>(buf.size())));
  detail::put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("checkpoint write failed: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 5 + 4 + 4 + 4) throw CheckpointError("checkpoint too small: " + path);
  if (std::memcmp(buf.data(), kCheckpointMagic, 5) != 0)
    throw CheckpointError("bad checkpoint magic: " + path);
  const uint32_t stored_crc = static_cast<uint32_t>(buf[buf.size() - 4]) |
                              (static_cast<uint32_t>(buf[buf.size() - 3]) << 8) |
                              (static_cast<uint32_t>(buf[buf.size() - 2]) << 16) |
                              (static_cast<uint32_t>(buf[buf.size() - 1]) << 24);
  const uint32_t actual_crc = static_cast<uint32_t>(
      crc32(crc32(0L, nullptr, 0), buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (stored_crc != actual_crc) throw CheckpointError("checkpoint CRC mismatch: " + path);

  detail::ByteReader r{buf.data() + 5, buf.size() - 5 - 4};
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const uint32_t name_len = r.u32();
    r.need(name_len);
    e.name.assign(reinterpret_cast<const char*>(r.p), name_len);
    r.p += name_len;
    r.left -= name_len;
    e.dtype = r.u8();
    const uint8_t rank = r.u8();
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      e.dims.push_back(static_cast<int64_t>(r.u32()));
      numel *= e.dims.back();
    }
    e.raw.resize(static_cast<size_t>(numel) * dtype_size(e.dtype));
    r.bytes(e.raw.data(), e.raw.size());
    entries.push_back(std::move(e));
  }
  if (r.left != 0) throw CheckpointError("trailing bytes in checkpoint: " + path);
  return entries;
}

// --- model <-> checkpoint ----------------------------------------------------

namespace detail {

inline CheckpointEntry meta_entry(const std::string& key, double value) {
  return make_entry<double>("meta." + key, {1}, {value});
}

inline double meta_value(const std::vector<CheckpointEntry>& entries, const std::string& key) {
  for (const auto& e : entries) {
    if (e.name == "meta." + key) return entry_values<double>(e)[0];
  }
  throw CheckpointError("checkpoint missing meta field: " + key);
}

}  // namespace detail

template <class S>
std::vector<CheckpointEntry> model_to_entries(const PyramidModel<S>& model) {
  const auto& cfg = model.config();
  std::vector<CheckpointEntry> entries;
  entries.push_back(detail::meta_entry("channels", static_cast<double>(cfg.channels)));
  entries.push_back(detail::meta_entry("levels", static_cast<double>(cfg.levels)));
  entries.push_back(detail::meta_entry("blocks", static_cast<double>(cfg.blocks)));
  entries.push_back(detail::meta_entry(
      "subnet_kind", cfg.subnet.kind == SubnetKind::kDense ? 0.0 : 1.0));
  entries.push_back(detail::meta_entry("growth", static_cast<double>(cfg.subnet.growth)));
  entries.push_back(detail::meta_entry("slope", cfg.subnet.slope));
  entries.push_back(detail::meta_entry("alpha", cfg.alpha));
  entries.push_back(detail::meta_entry("noise_fraction", cfg.noise_fraction));
  entries.push_back(detail::meta_entry(
      "haar_norm", cfg.norm == HaarNorm::kAveraging ? 0.0 : 1.0));
  const auto& store = model.params();
  for (size_t i = 0; i < store.size(); ++i)
    entries.push_back(make_entry<S>(store.name(i), store.tensor(i).shape(),
                                    store.tensor(i).values()));
  return entries;
}

inline ModelConfig config_from_entries(const std::vector<CheckpointEntry>& entries) {
  ModelConfig cfg;
  cfg.channels = static_cast<int64_t>(detail::meta_value(entries, "channels"));
  cfg.levels = static_cast<int>(detail::meta_value(entries, "levels"));
  cfg.blocks = static_cast<int>(detail::meta_value(entries, "blocks"));
  cfg.subnet.kind = detail::meta_value(entries, "subnet_kind") == 0.0 ? SubnetKind::kDense
                                                                      : SubnetKind::kResidual;
  cfg.subnet.growth = static_cast<int64_t>(detail::meta_value(entries, "growth"));
  cfg.subnet.slope = detail::meta_value(entries, "slope");
  cfg.alpha = detail::meta_value(entries, "alpha");
  cfg.noise_fraction = detail::meta_value(entries, "noise_fraction");
  cfg.norm = detail::meta_value(entries, "haar_norm") == 0.0 ? HaarNorm::kAveraging
                                                             : HaarNorm::kOrthonormal;
  return cfg;
}

// Dtype tag of the stored parameters (meta entries are always f64).
inline uint8_t checkpoint_param_dtype(const std::vector<CheckpointEntry>& entries) {
  for (const auto& e : entries) {
    if (e.name.rfind("meta.", 0) != 0) return e.dtype;
  }
  throw CheckpointError("checkpoint holds no parameter tensors");
}

template <class S>
PyramidModel<S> model_from_entries(const std::vector<CheckpointEntry>& entries) {
  PyramidModel<S> model(config_from_entries(entries), /*seed=*/0);
  auto& store = model.params();
  size_t loaded = 0;
  for (const auto& e : entries) {
    if (e.name.rfind("meta.", 0) == 0) continue;
    if (!store.contains(e.name))
      throw CheckpointError("checkpoint entry does not match the model: " + e.name);
    auto& p = store.at(e.name);
    if (p.shape() != e.dims)
      throw CheckpointError("checkpoint entry '" + e.name + "' has shape " + shape_str(e.dims) +
                            ", model expects " + shape_str(p.shape()));
    p.mutable_values() = entry_values<S>(e);
    ++loaded;
  }
  if (loaded != store.size())
    throw CheckpointError("checkpoint is missing parameter tensors");
  return model;
}

template <class S>
void save_model(const std::string& path, const PyramidModel<S>& model) {
  write_checkpoint(path, model_to_entries(model));
}

template <class S>
PyramidModel<S> load_model(const std::string& path) {
  return model_from_entries<S>(read_checkpoint(path));
}

}  // namespace hdiv

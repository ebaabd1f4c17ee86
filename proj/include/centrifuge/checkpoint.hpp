#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "centrifuge/model.hpp"
#include "centrifuge/videoio.hpp"

// Checkpoint file: "CFCK" u32 version | u64 json length, json | i64 step |
// u32 tensor count, then per tensor: u32 name length, name, u32 ndim,
// u32 dims..., float32 payload. Little-endian throughout.

namespace centrifuge {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointData {
  nlohmann::json meta;  // {"model": ModelConfig, "train": ..., ...}
  std::int64_t step = 0;
  std::map<std::string, TensorF> tensors;

  ModelConfig model_config() const { return meta.at("model").get<ModelConfig>(); }
};

namespace detail {

inline constexpr char kCkptMagic[4] = {'C', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;

template <class T>
void put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace detail

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_checkpoint(const fs::path& path, const CheckpointData& ck) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream o(tmp, std::ios::binary);
    if (!o) throw IoError("cannot write checkpoint " + tmp.string());
    o.write(detail::kCkptMagic, 4);
    detail::put<std::uint32_t>(o, detail::kCkptVersion);
    const std::string meta = ck.meta.dump();
    detail::put<std::uint64_t>(o, meta.size());
    o.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::put<std::int64_t>(o, ck.step);
    detail::put<std::uint32_t>(o, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      detail::put<std::uint32_t>(o, static_cast<std::uint32_t>(name.size()));
      o.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put<std::uint32_t>(o, static_cast<std::uint32_t>(t.ndim()));
      for (int d : t.shape()) detail::put<std::uint32_t>(o, static_cast<std::uint32_t>(d));
      o.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!o) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline CheckpointData read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, detail::kCkptMagic))
    throw IoError(path.string() + " is not a checkpoint");
  if (detail::get<std::uint32_t>(in, "version") != detail::kCkptVersion)
    throw IoError("unsupported checkpoint version in " + path.string());
  CheckpointData ck;
  const auto meta_len = detail::get<std::uint64_t>(in, "metadata length");
  std::string meta(meta_len, '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta_len))) throw IoError("checkpoint truncated in metadata");
  ck.meta = nlohmann::json::parse(meta);
  ck.step = detail::get<std::int64_t>(in, "step");
  const auto count = detail::get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(detail::get<std::uint32_t>(in, "name length"), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("checkpoint truncated in name");
    std::vector<int> shape(detail::get<std::uint32_t>(in, "ndim"));
    for (auto& d : shape) d = static_cast<int>(detail::get<std::uint32_t>(in, "dims"));
    TensorF t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw IoError("checkpoint truncated in tensor " + name);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in checkpoint " + path.string());
  return ck;
}

/// Parameters and normalization statistics of `model` into `ck.tensors`.
inline void store_model(SeparationModel& model, CheckpointData& ck) {
  ck.meta["model"] = model.config();
  for (auto* p : model.parameters()) ck.tensors[p->name] = p->value;
  for (auto* b : model.buffers()) ck.tensors[b->name] = b->value;
}

inline void restore_model(SeparationModel& model, const CheckpointData& ck) {
  auto take = [&](const std::string& name, TensorF& dst) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw IoError("checkpoint lacks tensor " + name);
    if (it->second.shape() != dst.shape())
      throw IoError("checkpoint tensor " + name + " has shape " + shape_string(it->second.shape()) + ", model expects " +
                    shape_string(dst.shape()));
    dst = it->second;
  };
  for (auto* p : model.parameters()) take(p->name, p->value);
  for (auto* b : model.buffers()) take(b->name, b->value);
}

inline std::unique_ptr<SeparationModel> load_model(const fs::path& path) {
  const auto ck = read_checkpoint(path);
  auto model = build_model(ck.model_config());
  restore_model(*model, ck);
  return model;
}

}  // namespace centrifuge

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "silt/embed_store.hpp"
#include "silt/head.hpp"

namespace silt {

inline constexpr int kCheckpointFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Tensor file: per tensor [u16 name_len][name][u8 rank][u32 dims...][f32 data],
/// all little-endian, concatenated.
inline void write_tensors(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::vector<unsigned char> buf;
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name);
    if (t->rank() > 0xFF) throw FormatError("tensor rank too large: " + name);
    bytes::put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    bytes::put_u8(buf, static_cast<std::uint8_t>(t->rank()));
    for (std::size_t d : t->shape()) bytes::put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : t->data()) bytes::put_f32(buf, v);
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw StoreError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline NamedTensors read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), {});
  NamedTensors out;
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (buf.size() - pos < n) throw FormatError(path.string() + ": truncated at byte " + std::to_string(pos));
  };
  while (pos < buf.size()) {
    need(2);
    const std::size_t name_len = bytes::get_u16(buf.data() + pos);
    pos += 2;
    need(name_len + 1);
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    const std::size_t rank = buf[pos++];
    need(4 * rank);
    Shape shape(rank);
    for (auto& d : shape) {
      d = bytes::get_u32(buf.data() + pos);
      pos += 4;
    }
    const std::size_t n = numel(shape);
    need(4 * n);
    std::vector<float> data(n);
    for (auto& x : data) {
      x = bytes::get_f32(buf.data() + pos);
      pos += 4;
    }
    try {
      out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const NumericError& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

namespace detail {

/// Copies `stored` into the listed tensors, matching by name and shape.
inline void assign_tensors(const NamedTensors& stored, const std::vector<std::pair<std::string, Tensor*>>& targets,
                           const std::string& where, bool requires_grad) {
  if (stored.size() != targets.size()) {
    throw ConfigError(where + ": holds " + std::to_string(stored.size()) + " tensors, expected " +
                      std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& [name, t] = stored[i];
    if (name != targets[i].first) throw FormatError(where + ": tensor " + std::to_string(i) + " is '" + name + "', expected '" + targets[i].first + "'");
    if (t.defined() && targets[i].second->defined() && t.shape() != targets[i].second->shape()) {
      throw ConfigError(where + ": tensor '" + name + "' has shape " + to_string(t.shape()) + ", configuration expects " +
                        to_string(targets[i].second->shape()));
    }
    *targets[i].second = t.clone(requires_grad);
  }
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot open " + tmp.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw StoreError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Which head a checkpoint holds.
enum class HeadKind { silt, baseline };

inline std::string head_kind_name(HeadKind k) { return k == HeadKind::silt ? "silt" : "baseline"; }

inline void save_head(const std::filesystem::path& dir, const HeadConfig& cfg, const HeadParams<float>& params) {
  std::filesystem::create_directories(dir);
  write_tensors(dir / "params.bin", params.named());
  detail::write_json(dir / "head.json",
                     {{"format_version", kCheckpointFormatVersion}, {"model", "silt"}, {"config", cfg.to_json()}});
}

inline void save_baseline(const std::filesystem::path& dir, const HeadConfig& cfg, const BaselineParams<float>& params) {
  std::filesystem::create_directories(dir);
  write_tensors(dir / "params.bin", params.named());
  detail::write_json(dir / "head.json",
                     {{"format_version", kCheckpointFormatVersion}, {"model", "baseline"}, {"config", cfg.to_json()}});
}

struct HeadFile {
  HeadKind kind = HeadKind::silt;
  HeadConfig config;
};

inline HeadFile read_head_json(const std::filesystem::path& dir) {
  const auto j = detail::read_json(dir / "head.json");
  const int version = j.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw FormatError((dir / "head.json").string() + ": unsupported format_version " + std::to_string(version));
  }
  HeadFile f;
  const std::string model = j.value("model", "silt");
  if (model == "silt") {
    f.kind = HeadKind::silt;
  } else if (model == "baseline") {
    f.kind = HeadKind::baseline;
  } else {
    throw FormatError((dir / "head.json").string() + ": unknown model '" + model + "'");
  }
  f.config = HeadConfig::from_json(j.at("config"));
  return f;
}

/// Loads a SILT head. With `expected`, an architecture mismatch against the
/// stored config is a configuration error.
inline std::pair<HeadConfig, HeadParams<float>> load_head(const std::filesystem::path& dir,
                                                          const HeadConfig* expected = nullptr,
                                                          bool requires_grad = true) {
  const auto file = read_head_json(dir);
  if (file.kind != HeadKind::silt) throw ConfigError(dir.string() + " holds a baseline head, not a SILT head");
  if (expected && !expected->same_shape(file.config)) {
    throw ConfigError("checkpoint config " + file.config.to_json().dump() + " does not match " +
                      expected->to_json().dump());
  }
  auto params = HeadParams<float>::init(file.config, 0);
  detail::assign_tensors(read_tensors(dir / "params.bin"), params.named(), (dir / "params.bin").string(), requires_grad);
  return {file.config, std::move(params)};
}

inline std::pair<HeadConfig, BaselineParams<float>> load_baseline(const std::filesystem::path& dir) {
  const auto file = read_head_json(dir);
  if (file.kind != HeadKind::baseline) throw ConfigError(dir.string() + " holds a SILT head, not a baseline");
  auto params = BaselineParams<float>::init(file.config.D_in, 0);
  detail::assign_tensors(read_tensors(dir / "params.bin"), params.named(), (dir / "params.bin").string(), true);
  return {file.config, std::move(params)};
}

}  // namespace silt

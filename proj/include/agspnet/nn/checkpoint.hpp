#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "agspnet/nn/layers.hpp"

// Checkpoint layout: <dir>/manifest.json listing every tensor (name,
// shape, kind, file) plus one little-endian float32 blob per tensor.

namespace agspnet::nn {

namespace detail {

inline std::string blob_name(const std::string& tensor) {
  std::string s = tensor;
  for (char& c : s) {
    if (c == '/' || c == '\\') c = '_';
  }
  return s + ".bin";
}

template <typename T>
void write_blob(const std::filesystem::path& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const T v : data) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out.write(reinterpret_cast<const char*>(&bits), 4);
  }
}

template <typename T>
void read_blob(const std::filesystem::path& path, std::vector<T>& data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint blob " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != data.size() * 4) throw DataError("checkpoint blob has wrong size: " + path.string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &bytes[i * 4], 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    float f;
    std::memcpy(&f, &bits, 4);
    data[i] = static_cast<T>(f);
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Registry<T>& reg, const std::filesystem::path& dir, const nlohmann::json& meta = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : reg.params()) {
    const Shape s = p.value().shape;
    tensors.push_back({{"name", p.name}, {"kind", "param"}, {"shape", {s.n, s.c, s.h, s.w}}, {"file", detail::blob_name(p.name)}});
    detail::write_blob(dir / detail::blob_name(p.name), p.value().data);
  }
  for (const auto& b : reg.buffers()) {
    tensors.push_back({{"name", b.name}, {"kind", "buffer"}, {"shape", {b.data.size()}}, {"file", detail::blob_name(b.name)}});
    detail::write_blob(dir / detail::blob_name(b.name), b.data);
  }
  nlohmann::json manifest = {{"format", "agspnet-checkpoint/1"}, {"dtype", "f32le"}, {"tensors", tensors}};
  if (!meta.is_null()) manifest["meta"] = meta;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

/// Loads into an already-built registry; names and shapes must match.
template <typename T>
nlohmann::json load_checkpoint(Registry<T>& reg, const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : manifest.at("tensors")) entries[t.at("name").get<std::string>()] = t;
  require(entries.size() == reg.params().size() + reg.buffers().size(), "checkpoint tensor count does not match the model");
  for (auto& p : reg.params()) {
    auto it = entries.find(p.name);
    require(it != entries.end(), "checkpoint lacks tensor " + p.name);
    const Shape s = p.value().shape;
    require(it->second.at("shape") == nlohmann::json({s.n, s.c, s.h, s.w}), "checkpoint shape mismatch for " + p.name);
    detail::read_blob(dir / it->second.at("file").template get<std::string>(), p.value().data);
    std::fill(p.momentum.begin(), p.momentum.end(), T(0));
    p.var->grad.clear();
  }
  for (auto& b : reg.buffers()) {
    auto it = entries.find(b.name);
    require(it != entries.end(), "checkpoint lacks tensor " + b.name);
    require(it->second.at("shape") == nlohmann::json({b.data.size()}), "checkpoint shape mismatch for " + b.name);
    detail::read_blob(dir / it->second.at("file").template get<std::string>(), b.data);
  }
  return manifest.value("meta", nlohmann::json{});
}

}  // namespace agspnet::nn

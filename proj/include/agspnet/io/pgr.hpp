#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <type_traits>

#include "agspnet/raster.hpp"
#include "json.hpp"

// PGR: a JSON header `<name>.pgr.json` plus a little-endian row-major
// payload `<name>.pgr`. dtype is "f32" or "u16".

namespace agspnet::io {

namespace fs = std::filesystem;

inline fs::path pgr_payload_path(const fs::path& p) {
  const std::string s = p.string();
  if (s.size() > 9 && s.ends_with(".pgr.json")) return fs::path(s.substr(0, s.size() - 5));
  return p;
}

inline fs::path pgr_header_path(const fs::path& p) {
  return fs::path(pgr_payload_path(p).string() + ".json");
}

namespace detail {

template <typename W>
void write_le(std::ofstream& out, W v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(W));
  }
  out.write(reinterpret_cast<const char*>(&v), sizeof(W));
}

template <typename W>
W from_le(const unsigned char* p) {
  W v;
  std::memcpy(&v, p, sizeof(W));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(W));
  }
  return v;
}

}  // namespace detail

template <typename T>
void write_pgr(const fs::path& path, const Raster<T>& r) {
  constexpr bool is_float = std::is_floating_point_v<T>;
  const auto& f = r.frame();
  nlohmann::json h = {{"width", f.width},           {"height", f.height},
                      {"origin_x", f.origin_x},     {"origin_y", f.origin_y},
                      {"pixel_size", f.pixel_size}, {"dtype", is_float ? "f32" : "u16"}};
  h["nodata"] = r.nodata() ? nlohmann::json(*r.nodata()) : nlohmann::json(nullptr);
  const fs::path payload = pgr_payload_path(path);
  if (payload.has_parent_path()) fs::create_directories(payload.parent_path());
  std::ofstream out(payload, std::ios::binary);
  if (!out) throw DataError("cannot write " + payload.string());
  for (const T v : r.cells()) {
    if constexpr (is_float) {
      detail::write_le(out, static_cast<float>(v));
    } else {
      if (static_cast<std::uint64_t>(v) > std::numeric_limits<std::uint16_t>::max())
        throw DataError("label value exceeds the u16 range of PGR: " + payload.string());
      detail::write_le(out, static_cast<std::uint16_t>(v));
    }
  }
  std::ofstream hdr(pgr_header_path(path));
  hdr << h.dump(2) << '\n';
}

inline nlohmann::json read_pgr_header(const fs::path& path) {
  std::ifstream in(pgr_header_path(path));
  if (!in) throw DataError("missing PGR header " + pgr_header_path(path).string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed PGR header " + pgr_header_path(path).string() + ": " + e.what());
  }
}

/// Reads a PGR raster, converting cells to T.
template <typename T>
Raster<T> read_pgr(const fs::path& path) {
  const auto h = read_pgr_header(path);
  GeoFrame f;
  std::string dtype;
  try {
    f.width = h.at("width").get<int>();
    f.height = h.at("height").get<int>();
    f.origin_x = h.at("origin_x").get<double>();
    f.origin_y = h.at("origin_y").get<double>();
    f.pixel_size = h.at("pixel_size").get<double>();
    dtype = h.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad PGR header " + path.string() + ": " + e.what());
  }
  validate(f);
  require(dtype == "f32" || dtype == "u16", "unsupported PGR dtype " + dtype);
  const std::size_t width = dtype == "f32" ? 4 : 2;
  std::ifstream in(pgr_payload_path(path), std::ios::binary);
  if (!in) throw DataError("missing PGR payload " + pgr_payload_path(path).string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() == f.size() * width, "PGR payload size does not match header: " + path.string());
  Raster<T> r(f);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (dtype == "f32") {
      r[i] = static_cast<T>(detail::from_le<float>(&bytes[i * 4]));
    } else {
      r[i] = static_cast<T>(detail::from_le<std::uint16_t>(&bytes[i * 2]));
    }
  }
  if (h.contains("nodata") && !h["nodata"].is_null()) r.set_nodata(h["nodata"].get<double>());
  return r;
}

}  // namespace agspnet::io

#pragma once

// On-disk formats:
//   raster      <stem>.f32  little-endian float32, H*W*C interleaved
//               <stem>.json sidecar {height, width, channels, colorspace, role, seed, config}
//   preview     <stem>.png  8- or 16-bit
//   checkpoint  <dir>/topology.json, <dir>/params.bin (float32 LE),
//               <dir>/params.json index [{name, shape, offset}] (offset in bytes)

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <png.h>

#include "nirvis/error.hpp"
#include "nirvis/image.hpp"
#include "nirvis/networks.hpp"

namespace nirvis::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Plain files

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + p.string() + "'");
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in '" + p.string() + "': " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  const std::string s = read_text(p);
  return {s.begin(), s.end()};
}

inline void write_floats_le(std::ostream& out, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  std::memcpy(words.data(), values.data(), values.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big)
    for (auto& w : words) w = __builtin_bswap32(w);
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

inline std::vector<float> floats_from_le(const std::uint8_t* bytes, std::size_t count) {
  std::vector<std::uint32_t> words(count);
  std::memcpy(words.data(), bytes, count * 4);
  if constexpr (std::endian::native == std::endian::big)
    for (auto& w : words) w = __builtin_bswap32(w);
  std::vector<float> out(count);
  std::memcpy(out.data(), words.data(), count * 4);
  return out;
}

// ---------------------------------------------------------------------------
// Rasters

struct RasterInfo {
  std::string role;
  std::uint64_t seed = 0;
  json config = json::object();
};

/// Writes <stem>.f32 and <stem>.json.
inline void save_raster(const fs::path& stem, const Raster& r, const RasterInfo& info = {}) {
  fs::path bin = stem;
  bin += ".f32";
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + bin.string() + "'");
  write_floats_le(out, r.data());
  if (!out) throw DataError("write failed for '" + bin.string() + "'");
  json side = {{"height", r.height()},
               {"width", r.width()},
               {"channels", r.channels()},
               {"colorspace", std::string(to_string(r.space()))},
               {"role", info.role},
               {"seed", info.seed},
               {"config", info.config}};
  fs::path meta = stem;
  meta += ".json";
  write_json(meta, side);
}

/// Accepts either the stem or the .f32 path.
inline Raster load_raster(fs::path path, RasterInfo* info = nullptr) {
  if (path.extension() == ".f32" || path.extension() == ".json") path.replace_extension();
  fs::path bin = path, meta = path;
  bin += ".f32";
  meta += ".json";
  const json side = read_json(meta);
  int h = 0, w = 0, c = 0;
  ColorSpace cs = ColorSpace::RGB;
  try {
    h = side.at("height").get<int>();
    w = side.at("width").get<int>();
    c = side.at("channels").get<int>();
    cs = color_space_from_string(side.value("colorspace", std::string("RGB")));
  } catch (const std::exception& e) {
    throw DataError("bad raster sidecar '" + meta.string() + "': " + e.what());
  }
  const auto bytes = read_bytes(bin);
  Raster r(h, w, c, cs);
  if (bytes.size() != r.size() * 4)
    throw DataError("raster '" + bin.string() + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(r.size() * 4));
  r.storage() = floats_from_le(bytes.data(), r.size());
  if (info) {
    info->role = side.value("role", std::string());
    info->seed = side.value("seed", std::uint64_t{0});
    info->config = side.value("config", json::object());
  }
  return r;
}

/// PNG export of a [0,1] raster (1 or 3 channels; 2-channel chroma is padded
/// with a zero channel and offset by 0.5).
inline void save_png(const fs::path& path, const Raster& r, int bit_depth = 8) {
  detail::require(bit_depth == 8 || bit_depth == 16, "png: bit depth must be 8 or 16");
  const int ch = r.channels() == 1 ? 1 : 3;
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw DataError("cannot write '" + path.string() + "'");
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(fp, &std::fclose);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width()), static_cast<png_uint_32>(r.height()), bit_depth,
               ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int bytes_per = bit_depth / 8;
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<png_byte> row(static_cast<std::size_t>(r.width()) * ch * bytes_per);
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x)
      for (int c = 0; c < ch; ++c) {
        double v = 0.0;
        if (r.channels() == 2) v = c < 2 ? r.at(y, x, c) + 0.5 : 0.5;
        else v = r.at(y, x, c);
        const auto code = static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxv));
        png_byte* dst = row.data() + (static_cast<std::size_t>(x) * ch + c) * bytes_per;
        if (bytes_per == 1) {
          dst[0] = static_cast<png_byte>(code);
        } else {
          dst[0] = static_cast<png_byte>(code >> 8);
          dst[1] = static_cast<png_byte>(code & 0xFF);
        }
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads any PNG as 8-bit RGB in [0,1].
inline Raster load_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw DataError("cannot read PNG '" + path.string() + "': " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  Raster r(static_cast<int>(img.height), static_cast<int>(img.width), 3, ColorSpace::RGB);
  for (std::size_t i = 0; i < r.size(); ++i) r.storage()[i] = static_cast<float>(buf[i] / 255.0);
  return r;
}

/// Raster from a .png, .f32 or sidecar path.
inline Raster load_image(const fs::path& path) {
  if (path.extension() == ".png") return load_png(path);
  return load_raster(path);
}

/// Reads the dimensions from a PNG header.
inline std::pair<int, int> png_size(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 24 || std::memcmp(bytes.data() + 1, "PNG", 3) != 0) throw DataError("not a PNG: " + path.string());
  auto be32 = [&](std::size_t off) {
    return static_cast<int>((bytes[off] << 24) | (bytes[off + 1] << 16) | (bytes[off + 2] << 8) | bytes[off + 3]);
  };
  return {be32(20), be32(16)};  // height, width
}

// ---------------------------------------------------------------------------
// Parameter blobs and checkpoints

template <class T>
void save_parameters(const fs::path& dir, const nn::ParameterSet<T>& params) {
  fs::create_directories(dir);
  std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write parameter blob in '" + dir.string() + "'");
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& p : params.items()) {
    std::vector<float> vals(p.tensor.storage().begin(), p.tensor.storage().end());
    write_floats_le(out, vals);
    const Shape s = p.tensor.shape();
    index.push_back({{"name", p.name}, {"shape", {s.n, s.h, s.w, s.c}}, {"offset", offset}});
    offset += vals.size() * 4;
  }
  if (!out) throw DataError("write failed for parameter blob in '" + dir.string() + "'");
  write_json(dir / "params.json", index);
}

/// Overwrites every parameter of `params` from the blob; names and shapes must match.
template <class T>
void load_parameters(const fs::path& dir, nn::ParameterSet<T>& params) {
  const json index = read_json(dir / "params.json");
  const auto blob = read_bytes(dir / "params.bin");
  std::size_t matched = 0;
  for (const auto& entry : index) {
    const std::string name = entry.at("name").get<std::string>();
    const auto dims = entry.at("shape").get<std::vector<int>>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    auto it = std::find_if(params.items().begin(), params.items().end(), [&](const auto& p) { return p.name == name; });
    if (it == params.items().end()) throw DataError("checkpoint parameter '" + name + "' not present in topology");
    const Shape s = it->tensor.shape();
    if (dims.size() != 4 || dims[0] != s.n || dims[1] != s.h || dims[2] != s.w || dims[3] != s.c)
      throw DataError("checkpoint parameter '" + name + "' has a different shape");
    if (offset + s.size() * 4 > blob.size()) throw DataError("checkpoint blob truncated at '" + name + "'");
    const auto vals = floats_from_le(blob.data() + offset, s.size());
    auto& dst = it->tensor.storage();
    for (std::size_t i = 0; i < vals.size(); ++i) dst[i] = static_cast<T>(vals[i]);
    ++matched;
  }
  if (matched != params.size()) throw DataError("checkpoint is missing parameters");
}

template <class T>
void save_checkpoint(const fs::path& dir, const Pipeline<T>& net, const json& extra = json::object()) {
  fs::create_directories(dir);
  json topo = {{"format", "nirvis-checkpoint-1"}, {"topology", net.topology()}};
  if (!extra.empty()) topo["info"] = extra;
  write_json(dir / "topology.json", topo);
  save_parameters(dir, net.params());
}

inline PipelineTopology read_topology(const fs::path& dir) {
  const json j = read_json(dir / "topology.json");
  try {
    return j.at("topology").get<PipelineTopology>();
  } catch (const json::exception& e) {
    throw DataError("bad topology descriptor in '" + dir.string() + "': " + e.what());
  }
}

template <class T = float>
Pipeline<T> load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "topology.json")) throw DataError("no checkpoint at '" + dir.string() + "'");
  Pipeline<T> net(read_topology(dir), 0);
  load_parameters(dir, net.params());
  return net;
}

}  // namespace nirvis::io

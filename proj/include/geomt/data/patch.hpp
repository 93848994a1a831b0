#pragma once

// In-memory patch representation and its on-disk encodings:
//   image  "GMTIMG01" u32 height, u32 width, u32 bands, u32 dtype(1=f32), H*W*B f32, HWC order
//   mask   "GMTMSK01" u32 height, u32 width, u32 dtype(2=u8), H*W u8
//   meta   one "key = value" line per PatchMeta field
// Integers and floats are little-endian.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geomt/data/text.hpp"
#include "geomt/error.hpp"
#include "geomt/geo_encoding.hpp"
#include "geomt/label_map.hpp"

namespace geomt {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr double kDefaultGsd = 0.2;  // meters per pixel

/// H x W x B float image, HWC order.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> values;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t b) : height(h), width(w), bands(b), values(h * w * b, 0.0f) {}

  float& operator()(std::size_t r, std::size_t c, std::size_t b) { return values[(r * width + c) * bands + b]; }
  float operator()(std::size_t r, std::size_t c, std::size_t b) const { return values[(r * width + c) * bands + b]; }

  friend bool operator==(const Image&, const Image&) = default;
};

struct PatchMeta {
  std::string patch_id;
  std::string domain_id;
  std::string zone;
  int month = 1;
  int hour = 12;
  double centroid_lon_m = kDefaultOriginLon;
  double centroid_lat_m = kDefaultOriginLat;
  double altitude_m = 0.0;
  std::string camera;

  RawCoordinate centroid() const { return {centroid_lon_m, centroid_lat_m}; }
  TimeStamp timestamp() const { return {month, hour}; }

  friend bool operator==(const PatchMeta&, const PatchMeta&) = default;
};

struct Patch {
  Image image;
  std::optional<LabelMap> label;
  PatchMeta meta;

  friend bool operator==(const Patch&, const Patch&) = default;
};

namespace detail {

inline constexpr char kImageMagic[8] = {'G', 'M', 'T', 'I', 'M', 'G', '0', '1'};
inline constexpr char kMaskMagic[8] = {'G', 'M', 'T', 'M', 'S', 'K', '0', '1'};

inline void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError("truncated header in " + what);
  return v;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return in;
}

}  // namespace detail

inline void write_image(const std::filesystem::path& path, const Image& img) {
  auto out = detail::open_out(path);
  out.write(detail::kImageMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(img.height));
  detail::put_u32(out, static_cast<std::uint32_t>(img.width));
  detail::put_u32(out, static_cast<std::uint32_t>(img.bands));
  detail::put_u32(out, 1);
  out.write(reinterpret_cast<const char*>(img.values.data()),
            static_cast<std::streamsize>(img.values.size() * sizeof(float)));
  if (!out) throw DataError("failed writing " + path.string());
}

inline Image read_image(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kImageMagic, 8) != 0) {
    throw DataError("not an image file: " + path.string());
  }
  Image img;
  img.height = detail::get_u32(in, path.string());
  img.width = detail::get_u32(in, path.string());
  img.bands = detail::get_u32(in, path.string());
  if (detail::get_u32(in, path.string()) != 1) throw DataError("unsupported image dtype in " + path.string());
  img.values.resize(img.height * img.width * img.bands);
  if (!in.read(reinterpret_cast<char*>(img.values.data()),
               static_cast<std::streamsize>(img.values.size() * sizeof(float)))) {
    throw DataError("truncated image data in " + path.string());
  }
  return img;
}

inline void write_mask(const std::filesystem::path& path, const LabelMap& label) {
  auto out = detail::open_out(path);
  out.write(detail::kMaskMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(label.height));
  detail::put_u32(out, static_cast<std::uint32_t>(label.width));
  detail::put_u32(out, 2);
  std::vector<std::uint8_t> bytes(label.entries.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (label.entries[i] < 0 || label.entries[i] > 255) throw DataError("label value does not fit in a byte");
    bytes[i] = static_cast<std::uint8_t>(label.entries[i]);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

inline LabelMap read_mask(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kMaskMagic, 8) != 0) {
    throw DataError("not a mask file: " + path.string());
  }
  const auto h = detail::get_u32(in, path.string());
  const auto w = detail::get_u32(in, path.string());
  if (detail::get_u32(in, path.string()) != 2) throw DataError("unsupported mask dtype in " + path.string());
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h) * w);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError("truncated mask data in " + path.string());
  }
  LabelMap label(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) label.entries[i] = bytes[i];
  return label;
}

/// Reads a "key = value" file into a map; '#' starts a comment line.
inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    kv[text::trim(t.substr(0, eq))] = text::trim(t.substr(eq + 1));
  }
  return kv;
}

inline void write_meta(const std::filesystem::path& path, const PatchMeta& m) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "patch_id = " << m.patch_id << '\n'
      << "domain = " << m.domain_id << '\n'
      << "zone = " << m.zone << '\n'
      << "month = " << m.month << '\n'
      << "hour = " << m.hour << '\n'
      << "centroid_lon_m = " << text::format_double(m.centroid_lon_m) << '\n'
      << "centroid_lat_m = " << text::format_double(m.centroid_lat_m) << '\n'
      << "altitude_m = " << text::format_double(m.altitude_m) << '\n'
      << "camera = " << m.camera << '\n';
}

inline PatchMeta read_meta(const std::filesystem::path& path) {
  const auto kv = read_key_values(path);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(path.string() + ": missing metadata field '" + key + "'");
    return it->second;
  };
  auto get_double = [&](const char* key) {
    double v = 0.0;
    if (!text::parse_double(get(key), v) || !std::isfinite(v)) {
      throw DataError(path.string() + ": field '" + key + "' is not a finite number");
    }
    return v;
  };
  auto get_int = [&](const char* key) {
    int v = 0;
    if (!text::parse_int(get(key), v)) throw DataError(path.string() + ": field '" + key + "' is not an integer");
    return v;
  };
  PatchMeta m;
  m.patch_id = get("patch_id");
  m.domain_id = get("domain");
  m.zone = get("zone");
  m.month = get_int("month");
  m.hour = get_int("hour");
  m.centroid_lon_m = get_double("centroid_lon_m");
  m.centroid_lat_m = get_double("centroid_lat_m");
  m.altitude_m = get_double("altitude_m");
  m.camera = get("camera");
  if (m.month < 1 || m.month > 12) throw DataError(path.string() + ": month out of range");
  if (m.hour < 0 || m.hour > 23) throw DataError(path.string() + ": hour out of range");
  return m;
}

}  // namespace geomt

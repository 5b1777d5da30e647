// In-memory rasters and the CDRAST1 container format.
//
// CDRAST1 layout (little-endian):
//   bytes 0-7   magic "CDRAST1\0"
//   bytes 8-11  u32 height
//   bytes 12-15 u32 width
//   bytes 16-19 u32 channels
//   bytes 20-23 u32 dtype code (0 = u8, 1 = u16, 2 = f32)
//   bytes 24-   payload, planar: whole channel planes back to back,
//               row-major inside each plane, no padding
//
// Pixel (c, y, x) of a Raster lives at index c*h*w + y*w + x. Integer dtypes
// are widened to float on read with exact value preservation.
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cdtk/errors.hpp"

namespace cdtk {

struct Raster {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<float> data;  // planar, length = channels*height*width

  Raster() = default;
  Raster(std::uint32_t h, std::uint32_t w, std::uint32_t c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }

  float& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const Raster& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Per-pixel labels: 0 = unchanged, 1 = changed, 255 = ignore.
struct ChangeMask {
  static constexpr std::uint8_t kUnchanged = 0;
  static constexpr std::uint8_t kChanged = 1;
  static constexpr std::uint8_t kIgnore = 255;

  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> labels;  // row-major

  ChangeMask() = default;
  ChangeMask(std::uint32_t h, std::uint32_t w, std::uint8_t fill = 0)
      : height(h), width(w),
        labels(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return labels.size(); }

  std::uint8_t& at(std::uint32_t y, std::uint32_t x) {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(std::uint32_t y, std::uint32_t x) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
};

enum class RasterDtype : std::uint32_t { u8 = 0, u16 = 1, f32 = 2 };

using LogitMap = Raster;  // (K+1, h, w) pre-softmax scores

namespace detail {

constexpr std::array<char, 8> kRasterMagic = {'C', 'D', 'R', 'A',
                                              'S', 'T', '1', '\0'};

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF),
                     static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF),
                     static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

inline bool get_u32le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) |
      (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline void put_f32le(std::ostream& os, float f) {
  put_u32le(os, std::bit_cast<std::uint32_t>(f));
}

}  // namespace detail

inline Raster read_raster(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open raster file: " + path.string());

  std::array<char, 8> magic{};
  if (!is.read(magic.data(), 8))
    throw CorruptionError("truncated header in " + path.string());
  if (magic != detail::kRasterMagic)
    throw FormatError("bad magic in " + path.string());

  std::uint32_t h = 0, w = 0, c = 0, dtype = 0;
  if (!detail::get_u32le(is, h) || !detail::get_u32le(is, w) ||
      !detail::get_u32le(is, c) || !detail::get_u32le(is, dtype))
    throw CorruptionError("truncated header in " + path.string());
  if (h == 0 || w == 0 || c == 0)
    throw ValidationError("zero dimension in " + path.string());
  if (dtype > 2)
    throw FormatError("unknown dtype code " + std::to_string(dtype) + " in " +
                      path.string());

  const std::size_t count = static_cast<std::size_t>(c) * h * w;
  Raster r(h, w, c);
  if (dtype == 0) {
    std::vector<std::uint8_t> buf(count);
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(count)))
      throw CorruptionError("truncated payload in " + path.string());
    for (std::size_t i = 0; i < count; ++i)
      r.data[i] = static_cast<float>(buf[i]);
  } else if (dtype == 1) {
    std::vector<unsigned char> buf(count * 2);
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(count * 2)))
      throw CorruptionError("truncated payload in " + path.string());
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint16_t v = static_cast<std::uint16_t>(
          buf[2 * i] | (static_cast<std::uint16_t>(buf[2 * i + 1]) << 8));
      r.data[i] = static_cast<float>(v);
    }
  } else {
    std::vector<unsigned char> buf(count * 4);
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(count * 4)))
      throw CorruptionError("truncated payload in " + path.string());
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint32_t v =
          static_cast<std::uint32_t>(buf[4 * i]) |
          (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
          (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
          (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
      r.data[i] = std::bit_cast<float>(v);
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(r.data[i]))
      throw CorruptionError("non-finite value in " + path.string());
  }
  return r;
}

inline void write_raster(const Raster& r, const std::filesystem::path& path,
                         RasterDtype dtype = RasterDtype::f32) {
  if (r.height == 0 || r.width == 0 || r.channels == 0)
    throw ValidationError("refusing to write raster with zero dimension");
  if (r.data.size() !=
      static_cast<std::size_t>(r.channels) * r.height * r.width)
    throw ValidationError("raster data length does not match dimensions");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());

  os.write(detail::kRasterMagic.data(), 8);
  detail::put_u32le(os, r.height);
  detail::put_u32le(os, r.width);
  detail::put_u32le(os, r.channels);
  detail::put_u32le(os, static_cast<std::uint32_t>(dtype));

  if (dtype == RasterDtype::u8) {
    std::vector<std::uint8_t> buf(r.data.size());
    for (std::size_t i = 0; i < r.data.size(); ++i) {
      const float v = r.data[i];
      if (v < 0.0f || v > 255.0f || v != std::floor(v))
        throw ValidationError("value not representable as u8: " +
                              std::to_string(v));
      buf[i] = static_cast<std::uint8_t>(v);
    }
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
  } else if (dtype == RasterDtype::u16) {
    for (const float v : r.data) {
      if (v < 0.0f || v > 65535.0f || v != std::floor(v))
        throw ValidationError("value not representable as u16: " +
                              std::to_string(v));
      const auto u = static_cast<std::uint16_t>(v);
      const char b[2] = {static_cast<char>(u & 0xFF),
                         static_cast<char>((u >> 8) & 0xFF)};
      os.write(b, 2);
    }
  } else {
    for (const float v : r.data) detail::put_f32le(os, v);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

// Change masks travel as CDRAST1 with channels=1, dtype=u8. Any byte other
// than {0, 1, 255} is rejected, never coerced.
inline ChangeMask read_mask(const std::filesystem::path& path) {
  const Raster r = read_raster(path);
  if (r.channels != 1)
    throw FormatError("mask must have exactly one channel: " + path.string());
  ChangeMask m(r.height, r.width);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const float v = r.data[i];
    if (v != 0.0f && v != 1.0f && v != 255.0f)
      throw ValidationError("mask value outside {0,1,255} in " +
                            path.string());
    m.labels[i] = static_cast<std::uint8_t>(v);
  }
  return m;
}

inline void write_mask(const ChangeMask& m, const std::filesystem::path& path) {
  Raster r(m.height, m.width, 1);
  for (std::size_t i = 0; i < m.size(); ++i)
    r.data[i] = static_cast<float>(m.labels[i]);
  write_raster(r, path, RasterDtype::u8);
}

}  // namespace cdtk

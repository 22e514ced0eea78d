#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cgf/core/error.hpp"
#include "cgf/data/image.hpp"

namespace cgf::data {

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 | static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::io, "short write to " + path.string());
}

}  // namespace detail

inline constexpr char kRasterMagic[4] = {'M', 'S', 'R', '1'};

// "MSR1", u32 height, width, channels (LE), then f32 LE pixels in H,W,C order.
inline std::vector<std::uint8_t> encode_raster(const Image& img) {
  std::vector<std::uint8_t> out(kRasterMagic, kRasterMagic + 4);
  out.reserve(16 + 4 * img.size());
  detail::put_u32(out, static_cast<std::uint32_t>(img.height));
  detail::put_u32(out, static_cast<std::uint32_t>(img.width));
  detail::put_u32(out, static_cast<std::uint32_t>(img.channels));
  for (float v : img.pixels) detail::put_f32(out, v);
  return out;
}

inline Image decode_raster(const std::vector<std::uint8_t>& bytes, const std::string& origin = "raster") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kRasterMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::bad_magic, origin + ": bad magic (expected MSR1)");
  }
  if (bytes.size() < 16) throw FormatError(FormatError::Kind::truncated, origin + ": truncated header");
  const std::uint64_t h = detail::get_u32(bytes.data() + 4);
  const std::uint64_t w = detail::get_u32(bytes.data() + 8);
  const std::uint64_t c = detail::get_u32(bytes.data() + 12);
  if (h == 0 || w == 0 || c == 0) throw FormatError(FormatError::Kind::zero_dims, origin + ": zero dimension in header");
  const std::uint64_t expected = 16 + 4 * h * w * c;
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::truncated, origin + ": truncated payload (" + std::to_string(bytes.size()) +
                                                        " of " + std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw FormatError(FormatError::Kind::malformed, origin + ": trailing bytes after payload");
  Image img(h, w, c);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = detail::get_f32(bytes.data() + 16 + 4 * i);
  return img;
}

inline void write_raster(const std::filesystem::path& path, const Image& img) { detail::write_bytes(path, encode_raster(img)); }

inline Image read_raster(const std::filesystem::path& path) { return decode_raster(detail::read_bytes(path), path.string()); }

// 8-bit binary PGM of a single band, values clamped to [0,1].
inline void write_pgm(const std::filesystem::path& path, const std::vector<float>& values, std::size_t H, std::size_t W) {
  if (values.size() != H * W) throw ShapeError("write_pgm: value count does not match " + std::to_string(H) + "x" + std::to_string(W));
  const std::string header = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (float v : values) bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  detail::write_bytes(path, bytes);
}

// 8-bit binary PPM from three bands of an image.
inline void write_ppm(const std::filesystem::path& path, const Image& img, std::size_t r = 0, std::size_t g = 1, std::size_t b = 2) {
  if (r >= img.channels || g >= img.channels || b >= img.channels) throw InvalidArgument("write_ppm: band index out of range");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (std::size_t p = 0; p < img.height * img.width; ++p) {
    for (std::size_t c : {r, g, b}) {
      bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[p * img.channels + c], 0.0f, 1.0f) * 255.0f)));
    }
  }
  detail::write_bytes(path, bytes);
}

// Palette map: each sample is the raw cluster index, maxval K-1. Uses the
// 16-bit big-endian PGM variant when K exceeds 256.
inline void write_index_pgm(const std::filesystem::path& path, const std::vector<std::uint32_t>& indices, std::size_t H, std::size_t W,
                            std::size_t K) {
  if (indices.size() != H * W) throw ShapeError("write_index_pgm: index count does not match image size");
  if (K == 0 || K > 65536) throw InvalidArgument("write_index_pgm: K must be in [1, 65536]");
  const std::size_t maxval = std::max<std::size_t>(K - 1, 1);
  const std::string header = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (std::uint32_t v : indices) {
    if (v >= K) throw InvalidArgument("write_index_pgm: index " + std::to_string(v) + " outside [0, K)");
    if (maxval > 255) bytes.push_back(static_cast<std::uint8_t>(v >> 8));
    bytes.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  detail::write_bytes(path, bytes);
}

}  // namespace cgf::data

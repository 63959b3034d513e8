#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm {

/// Writes an 8-bit grayscale PNG (one IDAT chunk, zlib level 9). Enough for
/// sample-grid dumps without an image library dependency.
inline void write_gray_png(const std::string& path, const std::vector<std::uint8_t>& pixels,
                           std::int64_t width, std::int64_t height) {
  if (static_cast<std::int64_t>(pixels.size()) != width * height)
    fail("png: pixel buffer does not match dimensions");

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>((width + 1) * height));
  for (std::int64_t r = 0; r < height; ++r) {
    raw.push_back(0);  // filter: none
    for (std::int64_t c = 0; c < width; ++c)
      raw.push_back(pixels[static_cast<std::size_t>(r * width + c)]);
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    fail("png: deflate failed");
  comp.resize(comp_len);

  std::ofstream os(path, std::ios::binary);
  if (!os) fail("png: cannot open " + path);
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  auto write_chunk = [&os](const char type[4], const std::vector<std::uint8_t>& data) {
    auto be32 = [](std::uint32_t v) {
      return std::array<std::uint8_t, 4>{static_cast<std::uint8_t>(v >> 24),
                                         static_cast<std::uint8_t>(v >> 16),
                                         static_cast<std::uint8_t>(v >> 8),
                                         static_cast<std::uint8_t>(v)};
    };
    const auto len = be32(static_cast<std::uint32_t>(data.size()));
    os.write(reinterpret_cast<const char*>(len.data()), 4);
    os.write(type, 4);
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size()));
    std::uint32_t crc =
        crc32(0, reinterpret_cast<const Bytef*>(type), 4);
    crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    const auto crc_be = be32(crc);
    os.write(reinterpret_cast<const char*>(crc_be.data()), 4);
  };

  std::vector<std::uint8_t> ihdr(13, 0);
  auto put_be32 = [&ihdr](std::size_t off, std::uint32_t v) {
    ihdr[off] = static_cast<std::uint8_t>(v >> 24);
    ihdr[off + 1] = static_cast<std::uint8_t>(v >> 16);
    ihdr[off + 2] = static_cast<std::uint8_t>(v >> 8);
    ihdr[off + 3] = static_cast<std::uint8_t>(v);
  };
  put_be32(0, static_cast<std::uint32_t>(width));
  put_be32(4, static_cast<std::uint32_t>(height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 0;   // grayscale
  write_chunk("IHDR", ihdr);
  write_chunk("IDAT", comp);
  write_chunk("IEND", {});
  if (!os) fail("png: write failed for " + path);
}

/// Tiles generated samples (rows of a [-1,1] tensor, square images) into a
/// grid PNG.
template <typename R>
void write_sample_grid(const std::string& path, const Tensor<R>& samples, std::int64_t side,
                       std::int64_t grid_cols) {
  if (samples.rows() == 0) return;
  const std::int64_t n = samples.rows();
  const std::int64_t grid_rows = (n + grid_cols - 1) / grid_cols;
  const std::int64_t w = grid_cols * side, h = grid_rows * side;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w * h), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t gr = i / grid_cols, gc = i % grid_cols;
    for (std::int64_t r = 0; r < side; ++r)
      for (std::int64_t c = 0; c < side; ++c) {
        double v = (static_cast<double>(samples.at(i, r * side + c)) + 1.0) * 127.5;
        v = std::max(0.0, std::min(255.0, v));
        pixels[static_cast<std::size_t>((gr * side + r) * w + gc * side + c)] =
            static_cast<std::uint8_t>(v + 0.5);
      }
  }
  write_gray_png(path, pixels, w, h);
}

}  // namespace dgm

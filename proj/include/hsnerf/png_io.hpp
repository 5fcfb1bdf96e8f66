// Minimal PNG writer/reader for 8-bit grayscale and RGB images (masks and
// false-color renders). Non-interlaced, zlib-compressed; the reader handles
// all five scanline filters.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hsnerf::io {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 = gray, 3 = rgb
  std::vector<uint8_t> data;  // row-major, interleaved

  uint8_t& at(int r, int c, int ch) {
    return data[(size_t(r) * width + c) * channels + ch];
  }
  uint8_t at(int r, int c, int ch) const {
    return data[(size_t(r) * width + c) * channels + ch];
  }
};

void write_png(const std::string& path, const PngImage& img);
PngImage read_png(const std::string& path);

}  // namespace hsnerf::io

// The .hsic hyperspectral cube container: 8-byte magic "HSIC\0\0\0\1",
// uint32-LE length-prefixed UTF-8 JSON header {height, width, channels,
// wavelengths_um[], layout:"row-major-HWC", dtype:"f32le"}, then the raw
// f32-LE payload.
#pragma once

#include <string>
#include <vector>

#include "hsnerf/common.hpp"

namespace hsnerf::io {

struct HsiCube {
  int height = 0;
  int width = 0;
  VecD wavelengths_um;           // strictly increasing channel centers
  std::vector<float> data;       // H x W x C, row-major HWC

  int channels() const { return int(wavelengths_um.size()); }
  size_t pixel_count() const { return size_t(height) * size_t(width); }

  float& at(int r, int c, int ch) {
    return data[(size_t(r) * width + c) * channels() + ch];
  }
  float at(int r, int c, int ch) const {
    return data[(size_t(r) * width + c) * channels() + ch];
  }

  // All pixels as an (H*W) x C double matrix.
  MatD pixels() const;
  static HsiCube from_pixels(int height, int width, const VecD& wavelengths,
                             const MatD& pixels);
};

void write_hsic(const std::string& path, const HsiCube& cube);
HsiCube read_hsic(const std::string& path);  // throws IoError on any defect

}  // namespace hsnerf::io

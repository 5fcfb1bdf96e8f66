#include "hsnerf/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "hsnerf/common.hpp"

namespace hsnerf::io {

namespace {

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

uint32_t get_u32be(const uint8_t* p) {
  return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 |
         uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32be(out, uint32_t(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = uint32_t(
      crc32(0, out.data() + crc_start, uInt(out.size() - crc_start)));
  put_u32be(out, crc);
}

const uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

void write_png(const std::string& path, const PngImage& img) {
  check_input(img.channels == 1 || img.channels == 3,
              "write_png: only gray8 and rgb8 supported");
  check_input(img.width > 0 && img.height > 0, "write_png: empty image");
  check_internal(
      img.data.size() == size_t(img.width) * img.height * img.channels,
      "write_png: data size mismatch");

  // Filter 0 (None) on every scanline.
  const size_t stride = size_t(img.width) * img.channels;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * size_t(img.height));
  for (int r = 0; r < img.height; ++r) {
    raw.push_back(0);
    raw.insert(raw.end(), img.data.begin() + size_t(r) * stride,
               img.data.begin() + size_t(r + 1) * stride);
  }
  uLongf zlen = compressBound(uLong(raw.size()));
  std::vector<uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw IoError("write_png: compression failed");
  z.resize(zlen);

  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, uint32_t(img.width));
  put_u32be(ihdr, uint32_t(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);           // gray / truecolor
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter method
  ihdr.push_back(0);                                   // no interlace

  std::vector<uint8_t> file(kSignature, kSignature + 8);
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", z);
  append_chunk(file, "IEND", {});

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_png: cannot open '" + path + "'");
  out.write(reinterpret_cast<const char*>(file.data()),
            std::streamsize(file.size()));
  if (!out) throw IoError("write_png: write failed for '" + path + "'");
}

PngImage read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_png: cannot open '" + path + "'");
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
    throw IoError("read_png: bad signature in '" + path + "'");

  PngImage img;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  int bit_depth = 0, color_type = -1;
  while (pos + 12 <= file.size()) {
    uint32_t len = get_u32be(&file[pos]);
    if (pos + 12 + len > file.size())
      throw IoError("read_png: truncated chunk in '" + path + "'");
    std::string type(reinterpret_cast<const char*>(&file[pos + 4]), 4);
    const uint8_t* payload = &file[pos + 8];
    if (type == "IHDR") {
      if (len != 13) throw IoError("read_png: bad IHDR");
      img.width = int(get_u32be(payload));
      img.height = int(get_u32be(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0) throw IoError("read_png: interlace unsupported");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (bit_depth != 8 || (color_type != 0 && color_type != 2))
    throw IoError("read_png: only 8-bit gray/rgb supported");
  img.channels = color_type == 0 ? 1 : 3;
  if (img.width <= 0 || img.height <= 0)
    throw IoError("read_png: bad dimensions");

  const size_t stride = size_t(img.width) * img.channels;
  std::vector<uint8_t> raw((stride + 1) * size_t(img.height));
  uLongf rlen = uLongf(raw.size());
  if (uncompress(raw.data(), &rlen, idat.data(), uLong(idat.size())) != Z_OK ||
      rlen != raw.size())
    throw IoError("read_png: decompression failed for '" + path + "'");

  // Undo scanline filters.
  img.data.assign(stride * size_t(img.height), 0);
  const int bpp = img.channels;
  for (int r = 0; r < img.height; ++r) {
    const uint8_t filter = raw[size_t(r) * (stride + 1)];
    const uint8_t* src = &raw[size_t(r) * (stride + 1) + 1];
    uint8_t* dst = &img.data[size_t(r) * stride];
    const uint8_t* prev = r > 0 ? &img.data[size_t(r - 1) * stride] : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= size_t(bpp) ? dst[i - bpp] : 0;        // left
      const int b = prev ? prev[i] : 0;                         // up
      const int cc = (prev && i >= size_t(bpp)) ? prev[i - bpp] : 0;
      int x = src[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: {
          const int p = a + b - cc;
          const int pa = std::abs(p - a), pb = std::abs(p - b),
                    pc = std::abs(p - cc);
          x += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
          break;
        }
        default:
          throw IoError("read_png: unknown filter type");
      }
      dst[i] = uint8_t(x & 0xff);
    }
  }
  return img;
}

}  // namespace hsnerf::io

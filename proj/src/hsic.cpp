#include "hsnerf/hsic.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>

namespace hsnerf::io {

namespace {
constexpr char kMagic[8] = {'H', 'S', 'I', 'C', 0, 0, 0, 1};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                        (unsigned char)(v >> 16 & 0xff),
                        (unsigned char)(v >> 24 & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}
}  // namespace

MatD HsiCube::pixels() const {
  const int c = channels();
  MatD m(pixel_count(), c);
  for (size_t p = 0; p < pixel_count(); ++p)
    for (int j = 0; j < c; ++j) m(Eigen::Index(p), j) = data[p * c + j];
  return m;
}

HsiCube HsiCube::from_pixels(int height, int width, const VecD& wavelengths,
                             const MatD& pixels) {
  check_input(pixels.rows() == Eigen::Index(height) * width,
              "HsiCube::from_pixels: pixel count mismatch");
  check_input(pixels.cols() == wavelengths.size(),
              "HsiCube::from_pixels: channel count mismatch");
  HsiCube cube;
  cube.height = height;
  cube.width = width;
  cube.wavelengths_um = wavelengths;
  cube.data.resize(pixels.size());
  const int c = int(wavelengths.size());
  for (Eigen::Index p = 0; p < pixels.rows(); ++p)
    for (int j = 0; j < c; ++j)
      cube.data[size_t(p) * c + j] = float(pixels(p, j));
  return cube;
}

void write_hsic(const std::string& path, const HsiCube& cube) {
  check_input(cube.height > 0 && cube.width > 0 && cube.channels() > 0,
              "write_hsic: empty cube");
  check_internal(
      cube.data.size() == cube.pixel_count() * size_t(cube.channels()),
      "write_hsic: payload size mismatch");
  nlohmann::json header;
  header["height"] = cube.height;
  header["width"] = cube.width;
  header["channels"] = cube.channels();
  header["wavelengths_um"] = std::vector<double>(
      cube.wavelengths_um.data(),
      cube.wavelengths_um.data() + cube.wavelengths_um.size());
  header["layout"] = "row-major-HWC";
  header["dtype"] = "f32le";
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_hsic: cannot open '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, uint32_t(hs.size()));
  out.write(hs.data(), std::streamsize(hs.size()));
  out.write(reinterpret_cast<const char*>(cube.data.data()),
            std::streamsize(cube.data.size() * sizeof(float)));
  if (!out) throw IoError("write_hsic: write failed for '" + path + "'");
}

HsiCube read_hsic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_hsic: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("read_hsic: bad magic in '" + path + "'");
  uint32_t hlen = read_u32(in);
  if (!in || hlen == 0 || hlen > (1u << 24))
    throw IoError("read_hsic: corrupt header length in '" + path + "'");
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw IoError("read_hsic: truncated header in '" + path + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("read_hsic: invalid header JSON in '" + path +
                  "': " + e.what());
  }
  HsiCube cube;
  try {
    cube.height = header.at("height").get<int>();
    cube.width = header.at("width").get<int>();
    const int channels = header.at("channels").get<int>();
    auto wl = header.at("wavelengths_um").get<std::vector<double>>();
    if (int(wl.size()) != channels)
      throw IoError("read_hsic: wavelength count != channels");
    cube.wavelengths_um =
        Eigen::Map<const VecD>(wl.data(), Eigen::Index(wl.size()));
    if (header.at("layout").get<std::string>() != "row-major-HWC" ||
        header.at("dtype").get<std::string>() != "f32le")
      throw IoError("read_hsic: unsupported layout/dtype");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("read_hsic: header field error in '" + path +
                  "': " + e.what());
  }
  if (cube.height <= 0 || cube.width <= 0 || cube.channels() <= 0)
    throw IoError("read_hsic: non-positive dimensions in '" + path + "'");

  const size_t count = cube.pixel_count() * size_t(cube.channels());
  cube.data.resize(count);
  in.read(reinterpret_cast<char*>(cube.data.data()),
          std::streamsize(count * sizeof(float)));
  if (size_t(in.gcount()) != count * sizeof(float))
    throw IoError("read_hsic: truncated payload in '" + path + "'");
  char extra;
  if (in.read(&extra, 1))
    throw IoError("read_hsic: trailing bytes in '" + path + "'");
  return cube;
}

}  // namespace hsnerf::io

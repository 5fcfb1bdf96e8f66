#include "hsnerf/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>

namespace hsnerf::io {

namespace {
constexpr char kMagic[8] = {'H', 'S', 'C', 'K', 0, 0, 0, 1};

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

std::string sha256_hex(const void* data, size_t bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, bytes, digest, &len, EVP_sha256(), nullptr) != 1)
    throw InternalError("sha256_hex: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(size_t(len) * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::vector<Checkpoint::TensorRef> Checkpoint::tensors() const {
  std::vector<TensorRef> out;
  for (const auto& jt : manifest.at("tensors")) {
    TensorRef t;
    t.name = jt.at("name").get<std::string>();
    t.rows = jt.at("rows").get<int64_t>();
    t.cols = jt.at("cols").get<int64_t>();
    t.offset = jt.at("offset").get<int64_t>();
    out.push_back(t);
  }
  return out;
}

void Checkpoint::add_tensor(const std::string& name, const float* data,
                            int64_t rows, int64_t cols) {
  if (!manifest.contains("tensors")) manifest["tensors"] = nlohmann::json::array();
  nlohmann::json jt;
  jt["name"] = name;
  jt["rows"] = rows;
  jt["cols"] = cols;
  jt["offset"] = int64_t(blob.size());
  manifest["tensors"].push_back(jt);
  blob.insert(blob.end(), data, data + rows * cols);
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json manifest = ckpt.manifest;
  manifest["blob_sha256"] =
      sha256_hex(ckpt.blob.data(), ckpt.blob.size() * sizeof(float));
  manifest["blob_floats"] = int64_t(ckpt.blob.size());
  const std::string ms = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_checkpoint: cannot open '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, uint32_t(ms.size()));
  out.write(ms.data(), std::streamsize(ms.size()));
  out.write(reinterpret_cast<const char*>(ckpt.blob.data()),
            std::streamsize(ckpt.blob.size() * sizeof(float)));
  if (!out) throw IoError("write_checkpoint: write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("read_checkpoint: bad magic in '" + path + "'");
  uint32_t mlen = read_u32(in);
  if (!in || mlen == 0 || mlen > (1u << 26))
    throw IoError("read_checkpoint: corrupt manifest length");
  std::string ms(mlen, '\0');
  in.read(ms.data(), mlen);
  if (!in) throw IoError("read_checkpoint: truncated manifest");

  Checkpoint ckpt;
  try {
    ckpt.manifest = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("read_checkpoint: invalid manifest JSON: ") +
                  e.what());
  }
  int64_t count = 0;
  try {
    count = ckpt.manifest.at("blob_floats").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("read_checkpoint: manifest field error: ") +
                  e.what());
  }
  if (count < 0) throw IoError("read_checkpoint: negative blob size");
  ckpt.blob.resize(size_t(count));
  in.read(reinterpret_cast<char*>(ckpt.blob.data()),
          std::streamsize(size_t(count) * sizeof(float)));
  if (size_t(in.gcount()) != size_t(count) * sizeof(float))
    throw IoError("read_checkpoint: truncated blob in '" + path + "'");

  const std::string expect =
      ckpt.manifest.value("blob_sha256", std::string());
  const std::string got =
      sha256_hex(ckpt.blob.data(), ckpt.blob.size() * sizeof(float));
  if (expect != got)
    throw IoError("read_checkpoint: blob SHA-256 mismatch in '" + path + "'");
  return ckpt;
}

}  // namespace hsnerf::io

// Checkpoint container (.ckpt): 8-byte magic "HSCK\0\0\0\1", uint32-LE
// length-prefixed JSON manifest (iteration, config hash, channel weights,
// standardizer, seeds, the per-tensor offset table, and the SHA-256 of the
// blob), then the raw f32-LE blob. Optimizer moment buffers live in the blob
// alongside the parameters so a resumed run continues bit-identically.
#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "hsnerf/common.hpp"

namespace hsnerf::io {

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<float> blob;

  struct TensorRef {
    std::string name;
    int64_t rows = 0, cols = 0;
    int64_t offset = 0;  // in floats
  };

  std::vector<TensorRef> tensors() const;
  // Appends a tensor to the blob and records it in the manifest offset table.
  void add_tensor(const std::string& name, const float* data, int64_t rows,
                  int64_t cols);
  const float* tensor_data(const TensorRef& ref) const {
    return blob.data() + ref.offset;
  }
};

std::string sha256_hex(const void* data, size_t bytes);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);  // verifies blob SHA-256

}  // namespace hsnerf::io

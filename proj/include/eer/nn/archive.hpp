#pragma once

// Tensor archive: a JSON manifest (name -> shape, dtype, byte offset, plus
// free-form metadata) next to a flat little-endian float32 blob in manifest
// order. Shared by checkpoints and vector indexes.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "eer/nn/tensor.hpp"

namespace eer::nn {

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TensorArchive {
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<NamedTensor> tensors;

  const Matrix& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

/// Values are narrowed to float32 on write.
void write_archive(const std::filesystem::path& manifest_path,
                   const std::filesystem::path& blob_path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& manifest_path,
                           const std::filesystem::path& blob_path);

/// Rounds every entry to the nearest float32. Values that already passed
/// through this survive a save/load round trip bit for bit.
void round_to_float(Matrix& m);

}  // namespace eer::nn

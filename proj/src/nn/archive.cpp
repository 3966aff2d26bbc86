#include "eer/nn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "eer/error.hpp"
#include "eer/util.hpp"

namespace eer::nn {

namespace {

constexpr const char* kFormat = "eer-tensor-archive/1";

void put_float_le(std::string& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_float_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

const Matrix& TensorArchive::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ValidationError("archive has no tensor '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void round_to_float(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

void write_archive(const std::filesystem::path& manifest_path,
                   const std::filesystem::path& blob_path, const TensorArchive& archive) {
  nlohmann::ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["byte_order"] = "little";
  manifest["meta"] = archive.meta;
  auto entries = nlohmann::ordered_json::array();
  std::string blob;
  for (const auto& t : archive.tensors) {
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["shape"] = {t.value.rows(), t.value.cols()};
    e["dtype"] = "float32";
    e["offset"] = blob.size();
    entries.push_back(std::move(e));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      put_float_le(blob, static_cast<float>(t.value.data()[i]));
    }
  }
  manifest["tensors"] = std::move(entries);
  manifest["total_bytes"] = blob.size();
  write_file_atomic(blob_path, blob);
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

TensorArchive read_archive(const std::filesystem::path& manifest_path,
                           const std::filesystem::path& blob_path) {
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) {
    throw ValidationError("unsupported archive format in " + manifest_path.string());
  }
  const std::string blob = read_file(blob_path);
  if (manifest.value("total_bytes", std::size_t{0}) != blob.size()) {
    throw ValidationError("blob size does not match manifest for " + blob_path.string());
  }
  TensorArchive archive;
  archive.meta = manifest.at("meta");
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  for (const auto& e : manifest.at("tensors")) {
    if (e.at("dtype") != "float32") throw ValidationError("unsupported dtype");
    const auto rows = e.at("shape").at(0).get<Eigen::Index>();
    const auto cols = e.at("shape").at(1).get<Eigen::Index>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = static_cast<std::size_t>(rows * cols);
    if (offset + 4 * count > blob.size()) throw ValidationError("tensor exceeds blob");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < count; ++i) {
      m.data()[i] = static_cast<double>(get_float_le(bytes + offset + 4 * i));
    }
    archive.tensors.push_back({e.at("name").get<std::string>(), std::move(m)});
  }
  return archive;
}

}  // namespace eer::nn

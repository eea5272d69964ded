#include "psym/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "psym/errors.hpp"

namespace psym::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const CheckpointBlob& Checkpoint::blob(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return b;
  throw DataError("checkpoint has no blob named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json meta = ckpt.metadata;
  auto table = nlohmann::json::array();
  for (const auto& b : ckpt.blobs) {
    if (b.values.size() != numel(b.shape)) throw StateError("checkpoint blob '" + b.name + "' has wrong length");
    table.push_back({{"name", b.name}, {"shape", b.shape}});
  }
  meta["blobs"] = std::move(table);
  const std::string text = meta.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : ckpt.blobs)
      out.write(reinterpret_cast<const char*>(b.values.data()),
                static_cast<std::streamsize>(b.values.size() * sizeof(float)));
    if (!out) throw DataError("write failed for checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError(path.string() + " is not a checkpoint");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint format version " + std::to_string(version) + " is not supported");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint metadata in " + path.string());

  Checkpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint metadata: " + std::string(e.what()));
  }
  for (const auto& entry : ckpt.metadata.at("blobs")) {
    CheckpointBlob b;
    b.name = entry.at("name").get<std::string>();
    b.shape = entry.at("shape").get<Shape>();
    b.values.resize(numel(b.shape));
    in.read(reinterpret_cast<char*>(b.values.data()), static_cast<std::streamsize>(b.values.size() * sizeof(float)));
    if (!in) throw DataError("truncated checkpoint blob '" + b.name + "'");
    ckpt.blobs.push_back(std::move(b));
  }
  ckpt.metadata.erase("blobs");
  return ckpt;
}

void restore_tensor(const CheckpointBlob& blob, Tensor& tensor) {
  if (blob.shape != tensor.shape())
    throw DataError("checkpoint blob '" + blob.name + "' has shape " + shape_str(blob.shape) + ", model expects " +
                    shape_str(tensor.shape()));
  std::copy(blob.values.begin(), blob.values.end(), tensor.data().begin());
}

CheckpointBlob snapshot_tensor(const std::string& name, const Tensor& tensor) {
  auto d = tensor.data();
  return {name, tensor.shape(), std::vector<float>(d.begin(), d.end())};
}

}  // namespace psym::nn

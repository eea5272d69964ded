#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psym/nn/tensor.hpp"

namespace psym::nn {

inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'Y', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlob {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// On disk: "PSYM", u32 version, u64 metadata length, metadata JSON (with a
// "blobs" table of names and shapes appended), then each blob as
// little-endian f32 values in declaration order.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointBlob> blobs;

  const CheckpointBlob& blob(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies blob values into an existing tensor of the same shape.
void restore_tensor(const CheckpointBlob& blob, Tensor& tensor);
CheckpointBlob snapshot_tensor(const std::string& name, const Tensor& tensor);

}  // namespace psym::nn

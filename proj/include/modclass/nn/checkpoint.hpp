#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modclass/nn/tensor.hpp"

namespace modclass::nn {

enum class BlobKind : std::uint8_t { parameter = 0, buffer = 1 };

struct NamedBlob {
  std::string name;
  BlobKind kind = BlobKind::parameter;
  Shape shape;
  std::vector<float> values;
};

// On disk (little-endian):
//   "MCK1" | u16 version | u32 header length | header JSON (UTF-8)
//   u64 trainable parameter count | u32 blob count
//   per blob: u16 name length | name | u8 kind | u32 dims[3] | f32 values
struct Checkpoint {
  nlohmann::json header;
  std::vector<NamedBlob> blobs;

  std::size_t parameter_count() const;
  const NamedBlob* find(const std::string& name) const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Writes to a temporary sibling then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace modclass::nn

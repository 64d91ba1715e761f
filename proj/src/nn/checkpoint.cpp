#include "modclass/nn/checkpoint.hpp"

#include <fstream>

#include "modclass/common/binary_io.hpp"

namespace modclass::nn {

namespace {
constexpr char kMagic[4] = {'M', 'C', 'K', '1'};
}

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blobs) {
    if (b.kind == BlobKind::parameter) n += b.values.size();
  }
  return n;
}

const NamedBlob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    BinaryWriter w(out);
    w.put_bytes(kMagic);
    w.put(kCheckpointVersion);
    const std::string header = checkpoint.header.dump();
    w.put(static_cast<std::uint32_t>(header.size()));
    w.put_bytes(header);
    w.put(static_cast<std::uint64_t>(checkpoint.parameter_count()));
    w.put(static_cast<std::uint32_t>(checkpoint.blobs.size()));
    for (const auto& blob : checkpoint.blobs) {
      if (blob.values.size() != blob.shape.size()) {
        throw std::invalid_argument("checkpoint blob " + blob.name + " size does not match its shape");
      }
      w.put_string16(blob.name);
      w.put(static_cast<std::uint8_t>(blob.kind));
      w.put(static_cast<std::uint32_t>(blob.shape.batch));
      w.put(static_cast<std::uint32_t>(blob.shape.length));
      w.put(static_cast<std::uint32_t>(blob.shape.channels));
      w.put_floats(blob.values);
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  BinaryReader r(in, "checkpoint " + path.string());
  if (r.get_string(4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::string header = r.get_string(r.get<std::uint32_t>());
  try {
    ckpt.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  const auto declared = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  ckpt.blobs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob blob;
    blob.name = r.get_string16();
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1) throw FormatError(path.string() + ": unknown blob kind for " + blob.name);
    blob.kind = static_cast<BlobKind>(kind);
    blob.shape.batch = r.get<std::uint32_t>();
    blob.shape.length = r.get<std::uint32_t>();
    blob.shape.channels = r.get<std::uint32_t>();
    blob.values.resize(blob.shape.size());
    r.get_floats(blob.values);
    ckpt.blobs.push_back(std::move(blob));
  }
  if (declared != ckpt.parameter_count()) {
    throw FormatError(path.string() + ": declared parameter count " + std::to_string(declared) +
                      " does not match blobs (" + std::to_string(ckpt.parameter_count()) + ")");
  }
  return ckpt;
}

}  // namespace modclass::nn

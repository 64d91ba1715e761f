#include "modclass/data/shard.hpp"

#include <fstream>
#include <stdexcept>

#include "modclass/common/files.hpp"

namespace modclass::data {

std::size_t shard_header_size(const std::vector<std::string>& label_names) {
  std::size_t n = 4 + 2 + 4 + 4 + 2;
  for (const auto& name : label_names) n += 2 + name.size();
  return n;
}

std::size_t shard_record_size(std::size_t frame_length) { return 2 + 8 * frame_length; }

std::size_t write_shard(std::ostream& out, std::span<const IqFrame> frames, const std::vector<std::string>& label_names) {
  if (frames.empty()) throw std::invalid_argument("write_shard: no frames");
  if (label_names.empty() || label_names.size() > 256) {
    throw std::invalid_argument("write_shard: need between 1 and 256 label names");
  }
  const std::size_t length = frames.front().i.size();
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const IqFrame& f = frames[n];
    if (f.i.size() != length || f.q.size() != length) {
      throw std::invalid_argument("write_shard: frame " + std::to_string(n) + " has length " + std::to_string(f.i.size()) +
                                  "/" + std::to_string(f.q.size()) + ", expected " + std::to_string(length));
    }
    if (f.label >= label_names.size()) {
      throw std::invalid_argument("write_shard: frame " + std::to_string(n) + " label " + std::to_string(f.label) +
                                  " outside " + std::to_string(label_names.size()) + " classes");
    }
    if (f.snr_db < -128 || f.snr_db > 127) {
      throw std::invalid_argument("write_shard: frame " + std::to_string(n) + " SNR does not fit in i8");
    }
  }
  if (frames.size() > 0xFFFFFFFFu || length > 0xFFFFFFFFu) throw std::invalid_argument("write_shard: too large");

  BinaryWriter w(out);
  w.put_bytes(std::span<const char>(kShardMagic, 4));
  w.put(kShardVersion);
  w.put(static_cast<std::uint32_t>(frames.size()));
  w.put(static_cast<std::uint32_t>(length));
  w.put(static_cast<std::uint16_t>(label_names.size()));
  for (const auto& name : label_names) w.put_string16(name);
  for (const IqFrame& f : frames) {
    w.put(f.label);
    w.put(static_cast<std::int8_t>(f.snr_db));
    w.put_floats(f.i);
    w.put_floats(f.q);
  }
  if (!w.good()) throw std::runtime_error("write_shard: stream error");
  return frames.size();
}

std::size_t write_shard(const std::filesystem::path& path, std::span<const IqFrame> frames,
                        const std::vector<std::string>& label_names) {
  std::size_t count = 0;
  write_file_atomic(path, [&](std::ostream& out) { count = write_shard(out, frames, label_names); });
  return count;
}

Shard read_shard(std::istream& in, const std::string& what) {
  BinaryReader r(in, what);
  const std::string magic = r.get_string(4);
  if (magic != std::string(kShardMagic, 4)) throw FormatError(what + ": bad magic, not an IQS1 shard");
  const auto version = r.get<std::uint16_t>();
  if (version != kShardVersion) throw FormatError(what + ": unsupported shard version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  const auto length = r.get<std::uint32_t>();
  const auto classes = r.get<std::uint16_t>();
  Shard shard;
  for (std::uint16_t c = 0; c < classes; ++c) shard.label_names.push_back(r.get_string16());
  shard.frames.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    IqFrame f;
    f.label = r.get<std::uint8_t>();
    f.snr_db = r.get<std::int8_t>();
    if (f.label >= classes) {
      throw FormatError(what + ": frame " + std::to_string(n) + " label " + std::to_string(f.label) + " outside " +
                        std::to_string(classes) + " classes");
    }
    f.i.resize(length);
    f.q.resize(length);
    r.get_floats(f.i);
    r.get_floats(f.q);
    shard.frames.push_back(std::move(f));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes after last frame");
  return shard;
}

Shard read_shard(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open shard " + path.string());
  return read_shard(in, path.string());
}

}  // namespace modclass::data

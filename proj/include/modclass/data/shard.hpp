#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "modclass/common/binary_io.hpp"
#include "modclass/data/frame.hpp"

namespace modclass::data {

// Shard layout, little-endian:
//   "IQS1" u16 version u32 frame_count u32 frame_length u16 num_classes
//   num_classes x (u16 byte length, UTF-8 name)
//   frame_count x (u8 label, i8 snr_db, frame_length f32 I, frame_length f32 Q)
inline constexpr char kShardMagic[4] = {'I', 'Q', 'S', '1'};
inline constexpr std::uint16_t kShardVersion = 1;

struct Shard {
  std::vector<std::string> label_names;
  std::vector<IqFrame> frames;
};

std::size_t shard_header_size(const std::vector<std::string>& label_names);
std::size_t shard_record_size(std::size_t frame_length);

// Throws std::invalid_argument for an empty or heterogeneous frame list, a
// label outside label_names, or an SNR that does not fit in i8.
std::size_t write_shard(std::ostream& out, std::span<const IqFrame> frames, const std::vector<std::string>& label_names);
// Writes through a temporary file and renames it into place. Throws
// std::runtime_error on I/O failure.
std::size_t write_shard(const std::filesystem::path& path, std::span<const IqFrame> frames,
                        const std::vector<std::string>& label_names);

// Throws FormatError on a bad magic, version, truncation or out-of-range label.
Shard read_shard(std::istream& in, const std::string& what = "shard");
Shard read_shard(const std::filesystem::path& path);

}  // namespace modclass::data

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace modclass::data {

inline constexpr std::size_t kFrameLength = 1024;

// One labelled receive vector. `label` indexes the label-name list of the
// shard or dataset it belongs to.
struct IqFrame {
  std::vector<float> i;
  std::vector<float> q;
  std::uint8_t label = 0;
  int snr_db = 0;

  friend bool operator==(const IqFrame&, const IqFrame&) = default;
};

}  // namespace modclass::data

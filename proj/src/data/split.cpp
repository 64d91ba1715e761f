#include "modclass/data/split.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "modclass/common/random.hpp"

namespace modclass::data {

SplitResult split(std::span<const IqFrame> frames, const SplitSpec& spec) {
  if (spec.train_parts == 0 || spec.val_parts == 0 || spec.test_parts == 0) {
    throw std::invalid_argument("split: every part of the ratio must be positive");
  }
  const std::size_t total_parts = spec.train_parts + spec.val_parts + spec.test_parts;

  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t n = 0; n < frames.size(); ++n) cells[{frames[n].label, frames[n].snr_db}].push_back(n);

  SplitResult out;
  for (auto& [key, members] : cells) {
    const std::size_t n = members.size();
    if (n < 3) {
      out.warnings.push_back("cell (label " + std::to_string(key.first) + ", snr " + std::to_string(key.second) +
                             " dB) has " + std::to_string(n) + " frame(s); all assigned to train");
      out.train.insert(out.train.end(), members.begin(), members.end());
      continue;
    }
    std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(key.first),
                                    static_cast<std::uint64_t>(static_cast<std::int64_t>(key.second))));
    shuffle(members, rng);
    // Round half up; plain floor leaves small cells with a train share more
    // than one frame off the nominal fraction.
    const std::size_t n_val = (2 * n * spec.val_parts + total_parts) / (2 * total_parts);
    const std::size_t n_test = (2 * n * spec.test_parts + total_parts) / (2 * total_parts);
    auto it = members.begin();
    out.val.insert(out.val.end(), it, it + static_cast<std::ptrdiff_t>(n_val));
    it += static_cast<std::ptrdiff_t>(n_val);
    out.test.insert(out.test.end(), it, it + static_cast<std::ptrdiff_t>(n_test));
    it += static_cast<std::ptrdiff_t>(n_test);
    out.train.insert(out.train.end(), it, members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Batch make_batch(std::span<const IqFrame> frames, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no indices");
  const std::size_t length = frames[indices.front()].i.size();
  Batch batch;
  batch.inputs = nn::Tensor(nn::Shape{indices.size(), length, 2});
  float* dst = batch.inputs.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t idx = indices[b];
    if (idx >= frames.size()) throw std::out_of_range("make_batch: index " + std::to_string(idx) + " out of range");
    const IqFrame& f = frames[idx];
    if (f.i.size() != length || f.q.size() != length) throw std::invalid_argument("make_batch: mixed frame lengths");
    for (std::size_t k = 0; k < length; ++k) {
      dst[2 * k] = f.i[k];
      dst[2 * k + 1] = f.q[k];
    }
    dst += 2 * length;
    batch.labels.push_back(f.label);
    batch.snr_db.push_back(f.snr_db);
    batch.indices.push_back(idx);
  }
  return batch;
}

BatchStream::BatchStream(std::span<const IqFrame> frames, std::span<const std::size_t> indices, std::size_t batch_size,
                         std::uint64_t seed, std::uint64_t epoch)
    : frames_(frames), order_(indices.begin(), indices.end()), batch_size_(batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
  if (order_.empty()) throw std::invalid_argument("batches: empty index set");
  std::mt19937_64 rng(derive_seed(seed, 0xba7c4, epoch));
  shuffle(order_, rng);
}

bool BatchStream::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  batch = make_batch(frames_, std::span<const std::size_t>(order_).subspan(cursor_, n));
  cursor_ += n;
  return true;
}

std::size_t BatchStream::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace modclass::data

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modclass/data/frame.hpp"
#include "modclass/nn/tensor.hpp"

namespace modclass::data {

// Split ratio as integer parts, 8:1:1 by default.
struct SplitSpec {
  std::size_t train_parts = 8;
  std::size_t val_parts = 1;
  std::size_t test_parts = 1;
  std::uint64_t seed = 0;
};

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;
};

// Stratified by (label, snr_db) cell: each cell is shuffled with a seed
// derived from spec.seed and the cell key, then cut into rounded shares for
// val and test; train takes the remainder. Cells with fewer than 3 frames go
// entirely to train with a warning. Index lists come out sorted.
SplitResult split(std::span<const IqFrame> frames, const SplitSpec& spec);

struct Batch {
  nn::Tensor inputs;  // [b, frame_length, 2], channel 0 = I
  std::vector<std::size_t> labels;
  std::vector<int> snr_db;
  std::vector<std::size_t> indices;  // positions in the frame list
};

// Copies the given frames into a batch.
Batch make_batch(std::span<const IqFrame> frames, std::span<const std::size_t> indices);

// One epoch of mini-batches over `indices`, in an order fixed by
// (seed, epoch). The final short batch is kept.
class BatchStream {
 public:
  BatchStream(std::span<const IqFrame> frames, std::span<const std::size_t> indices, std::size_t batch_size,
              std::uint64_t seed, std::uint64_t epoch);

  bool next(Batch& batch);
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::span<const IqFrame> frames_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

}  // namespace modclass::data

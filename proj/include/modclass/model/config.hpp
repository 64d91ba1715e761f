#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace modclass::model {

// The SE-MSFN hyperparameters plus the input geometry.
struct ModelConfig {
  std::size_t kernel_size = 9;
  std::size_t blocks = 4;           // bottleneck blocks per residual layer = number of scales
  std::size_t reduction_ratio = 1;  // SE compression r
  std::size_t repetition = 2;       // residual layer + fusion stages
  std::size_t num_classes = 9;
  std::size_t base_filters = 32;
  bool se_enabled = true;
  std::size_t input_length = 1024;
  std::size_t input_channels = 2;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Throws std::invalid_argument for configurations that cannot be built and
// returns human-readable warnings for ones outside the explored grid.
std::vector<std::string> validate(const ModelConfig& config);

// Width of the SE bottleneck: floor(channels / r), at least 1.
std::size_t se_hidden_width(std::size_t channels, std::size_t reduction_ratio);

// Length of branch `scale` in the given stage (stage 0 is the first residual layer).
std::size_t branch_length(const ModelConfig& config, std::size_t stage, std::size_t scale);

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

struct GridRow {
  int number;
  std::size_t blocks;
  std::size_t reduction_ratio;
  std::size_t repetition;
};

// The sixteen (block, reduction ratio, repetition) combinations explored for
// SE-MSFN, in their published order.
inline constexpr std::array<GridRow, 16> kHyperparameterGrid{{
    {1, 4, 1, 3},  {2, 3, 1, 3},  {3, 2, 1, 3},  {4, 1, 1, 3},  {5, 4, 1, 2},  {6, 3, 1, 2},
    {7, 2, 1, 2},  {8, 1, 1, 2},  {9, 4, 1, 1},  {10, 3, 1, 1}, {11, 2, 1, 1}, {12, 1, 1, 1},
    {13, 4, 4, 2}, {14, 4, 8, 2}, {15, 4, 12, 2}, {16, 4, 16, 2},
}};

inline constexpr std::array<std::size_t, 8> kKernelSizeGrid{3, 5, 7, 8, 9, 11, 13, 15};

}  // namespace modclass::model

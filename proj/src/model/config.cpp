#include "modclass/model/config.hpp"

#include <algorithm>
#include <stdexcept>

namespace modclass::model {

std::size_t se_hidden_width(std::size_t channels, std::size_t reduction_ratio) {
  return std::max<std::size_t>(1, channels / std::max<std::size_t>(1, reduction_ratio));
}

std::size_t branch_length(const ModelConfig& config, std::size_t stage, std::size_t scale) {
  // Each bottleneck halves its input; stage 0 chains the blocks, later stages
  // run one block per incoming branch.
  std::size_t length = config.input_length;
  for (std::size_t i = 0; i < scale + 1 + stage; ++i) length = (length + 1) / 2;
  return length;
}

std::vector<std::string> validate(const ModelConfig& config) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (config.kernel_size < 3) fail("kernel_size must be >= 3");
  if (config.blocks < 1) fail("blocks must be >= 1");
  if (config.repetition < 1) fail("repetition must be >= 1");
  if (config.reduction_ratio < 1) fail("reduction_ratio must be >= 1");
  if (config.num_classes < 2) fail("num_classes must be >= 2");
  if (config.base_filters < 1) fail("base_filters must be >= 1");
  if (config.input_channels < 1) fail("input_channels must be >= 1");

  // Fusion aligns scales by exact factors of two, so every branch length in
  // every stage has to come out of an exact halving.
  const std::size_t halvings = config.blocks + config.repetition - 1;
  if (config.input_length == 0 || config.input_length % (std::size_t{1} << halvings) != 0) {
    fail("input_length " + std::to_string(config.input_length) + " must be a positive multiple of 2^" +
         std::to_string(halvings) + " for blocks=" + std::to_string(config.blocks) +
         ", repetition=" + std::to_string(config.repetition));
  }

  std::vector<std::string> warnings;
  if (config.blocks > 4) warnings.push_back("blocks=" + std::to_string(config.blocks) + " is outside the explored range 1..4");
  if (config.repetition > 3) {
    warnings.push_back("repetition=" + std::to_string(config.repetition) + " is outside the explored range 1..3");
  }
  if (config.se_enabled && config.base_filters % config.reduction_ratio != 0) {
    warnings.push_back("reduction_ratio " + std::to_string(config.reduction_ratio) + " does not divide " +
                       std::to_string(config.base_filters) + " channels; SE width rounds down to " +
                       std::to_string(se_hidden_width(config.base_filters, config.reduction_ratio)));
  }
  return warnings;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"kernel_size", c.kernel_size},       {"blocks", c.blocks},
                     {"reduction_ratio", c.reduction_ratio}, {"repetition", c.repetition},
                     {"num_classes", c.num_classes},       {"base_filters", c.base_filters},
                     {"se_enabled", c.se_enabled},         {"input_length", c.input_length},
                     {"input_channels", c.input_channels}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.kernel_size = j.value("kernel_size", d.kernel_size);
  c.blocks = j.value("blocks", d.blocks);
  c.reduction_ratio = j.value("reduction_ratio", d.reduction_ratio);
  c.repetition = j.value("repetition", d.repetition);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.base_filters = j.value("base_filters", d.base_filters);
  c.se_enabled = j.value("se_enabled", d.se_enabled);
  c.input_length = j.value("input_length", d.input_length);
  c.input_channels = j.value("input_channels", d.input_channels);
}

}  // namespace modclass::model

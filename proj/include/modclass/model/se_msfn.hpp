#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modclass/model/config.hpp"
#include "modclass/model/layers.hpp"
#include "modclass/nn/checkpoint.hpp"

namespace modclass::model {

// Multi-scale residual network with squeeze-and-excitation bottlenecks.
//
//   stem:   two k-tap convs, 2 -> C channels, full length
//   stage:  one bottleneck per branch (each halves length), then fusion
//   head:   per-branch conv + pool, concatenated, dense to K classes
//
// Stage 0 chains its bottlenecks so branch i has length L / 2^(i+1). Later
// stages run the bottleneck of branch i on the previous stage's fused branch i.
template <typename T>
class SeMsfnModel {
 public:
  explicit SeMsfnModel(const ModelConfig& config, bool passthrough_fusion = false);

  SeMsfnModel(const SeMsfnModel&) = delete;
  SeMsfnModel& operator=(const SeMsfnModel&) = delete;
  // Parameter references point into members, so moves rebuild them.
  SeMsfnModel(SeMsfnModel&& other) noexcept;
  SeMsfnModel& operator=(SeMsfnModel&& other) noexcept;

  const ModelConfig& config() const { return config_; }

  // x is [batch, input_length, input_channels]; returns logits [batch, 1, K].
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  // Accumulates into every parameter gradient; call after a train-mode forward.
  void backward(const BasicTensor<T>& grad_logits);

  // Parameters and buffers in a fixed order with hierarchical names.
  const std::vector<ParamSlot<T>*>& parameters() { return refs_.params; }
  const std::vector<BufferRef<T>>& buffers() { return refs_.buffers; }
  std::size_t parameter_count() const;

  void init(std::uint64_t seed);
  void zero_grad();

  // Class probabilities [batch, 1, K] in inference mode, evaluated in chunks.
  BasicTensor<T> predict_proba(const BasicTensor<T>& x, std::size_t chunk = 256);
  // Argmax of predict_proba, lowest index on ties.
  std::vector<int> predict(const BasicTensor<T>& x, std::size_t chunk = 256);

  // Copies parameter values and buffers from a model of the same config.
  template <typename U>
  void copy_from(SeMsfnModel<U>& other);

  // `extras` is merged into the header (label names, seeds, metrics).
  nn::Checkpoint to_checkpoint(const nlohmann::json& extras = nlohmann::json::object());
  static SeMsfnModel from_checkpoint(const nn::Checkpoint& checkpoint);

  SeBlock<T>* se_block(std::size_t stage, std::size_t block) { return stages_[stage].blocks[block].se(); }

 private:
  struct Stage {
    std::vector<BottleneckBlock<T>> blocks;
    MultiScaleFusion<T> fusion;
  };

  ModelConfig config_;
  ConvBn<T> stem1_, stem2_;
  std::vector<Stage> stages_;
  ClassifierHead<T> head_;
  ParamRefs<T> refs_;

  void rebuild_refs();
};

template <typename T>
template <typename U>
void SeMsfnModel<T>::copy_from(SeMsfnModel<U>& other) {
  if (!(other.config() == config_)) throw std::invalid_argument("copy_from: model configurations differ");
  const auto& src = other.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto in = src[i]->value.values();
    std::transform(in.begin(), in.end(), refs_.params[i]->value.values().begin(),
                   [](U v) { return static_cast<T>(v); });
  }
  const auto& bufs = other.buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) {
    std::transform(bufs[i].values->begin(), bufs[i].values->end(), refs_.buffers[i].values->begin(),
                   [](U v) { return static_cast<T>(v); });
  }
}

// Trainable parameter count for a configuration without building the model.
std::size_t parameter_count(const ModelConfig& config);

// Argmax over the last axis of [b, 1, K]; lowest index wins ties.
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& scores);

}  // namespace modclass::model

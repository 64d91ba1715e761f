#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "modclass/nn/ops.hpp"
#include "modclass/nn/param.hpp"

namespace modclass::model {

using nn::BasicTensor;
using nn::Mode;
using nn::ParamSlot;

// Non-trainable state that still belongs in a checkpoint (running BN stats).
template <typename T>
struct BufferRef {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
struct ParamRefs {
  std::vector<ParamSlot<T>*> params;
  std::vector<BufferRef<T>> buffers;
};

// He-uniform weights, zero bias. Draws from `rng` in a fixed order.
template <typename T>
void he_uniform(ParamSlot<T>& weight, std::size_t fan_in, std::mt19937_64& rng);

// conv -> batchnorm -> optional relu, with the forward state needed for
// backward cached in train mode.
template <typename T>
class ConvBn {
 public:
  ConvBn() = default;
  ConvBn(std::string name, std::size_t kernel, std::size_t c_in, std::size_t c_out, std::size_t stride, bool relu);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  // Accumulates parameter gradients; returns the input gradient unless
  // want_input_grad is false.
  BasicTensor<T> backward(const BasicTensor<T>& grad, bool want_input_grad = true);

  void collect(ParamRefs<T>& refs);
  void init(std::mt19937_64& rng);
  std::size_t out_channels() const { return weight_.value.channels(); }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::size_t stride_ = 1;
  bool relu_ = true;
  ParamSlot<T> weight_, bias_, gamma_, beta_;
  nn::RunningStats<T> stats_;
  BasicTensor<T> input_;
  nn::BatchNormCache<T> bn_cache_;
  BasicTensor<T> output_;
};

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, std::size_t in, std::size_t out);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> backward(const BasicTensor<T>& grad);

  void collect(ParamRefs<T>& refs);
  void init(std::mt19937_64& rng);
  ParamSlot<T>& weight() { return weight_; }
  ParamSlot<T>& bias() { return bias_; }

 private:
  std::string name_;
  ParamSlot<T> weight_, bias_;
  BasicTensor<T> input_;
};

// Squeeze-and-excitation: z = mean_W(u); s = sigmoid(fc2(relu(fc1(z))));
// out = s_c * u_c.
template <typename T>
class SeBlock {
 public:
  SeBlock() = default;
  SeBlock(std::string name, std::size_t channels, std::size_t reduction_ratio);

  BasicTensor<T> forward(const BasicTensor<T>& u, Mode mode);
  BasicTensor<T> backward(const BasicTensor<T>& grad);

  void collect(ParamRefs<T>& refs);
  void init(std::mt19937_64& rng);

  // Channel descriptor z and gate s from the most recent forward call.
  const BasicTensor<T>& last_squeeze() const { return squeeze_; }
  const BasicTensor<T>& last_scale() const { return scale_; }
  Dense<T>& fc1() { return fc1_; }
  Dense<T>& fc2() { return fc2_; }

 private:
  std::string name_;
  std::size_t channels_ = 0;
  Dense<T> fc1_, fc2_;
  BasicTensor<T> input_, squeeze_, hidden_, scale_;
};

// reduce (1x1) -> main (k, stride 2) -> expand (1x1) -> SE, plus a strided
// 1x1 projection shortcut; y = relu(se(main path) + shortcut).
template <typename T>
class BottleneckBlock {
 public:
  BottleneckBlock() = default;
  BottleneckBlock(std::string name, std::size_t kernel, std::size_t c_in, std::size_t width, std::size_t c_out,
                  std::optional<std::size_t> se_reduction);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> backward(const BasicTensor<T>& grad);

  void collect(ParamRefs<T>& refs);
  void init(std::mt19937_64& rng);
  SeBlock<T>* se() { return se_ ? &*se_ : nullptr; }

 private:
  std::string name_;
  ConvBn<T> reduce_, main_, expand_, shortcut_;
  std::optional<SeBlock<T>> se_;
  BasicTensor<T> output_;
};

// Exchanges information between branches whose lengths halve from one to the
// next. For each target scale t, coarser branches pass through a 1x1 conv and
// nearest-neighbour upsampling, finer ones through repeated k-tap stride-2
// convs; the aligned maps are summed with the target and passed through ReLU.
//
// In passthrough mode the mapping convs are replaced by identity, so coarser
// branches are only upsampled and finer ones only decimated.
template <typename T>
class MultiScaleFusion {
 public:
  MultiScaleFusion() = default;
  MultiScaleFusion(std::string name, std::size_t branches, std::size_t channels, std::size_t kernel,
                   bool passthrough = false);

  std::vector<BasicTensor<T>> forward(const std::vector<BasicTensor<T>>& branches, Mode mode);
  std::vector<BasicTensor<T>> backward(const std::vector<BasicTensor<T>>& grads);

  void collect(ParamRefs<T>& refs);
  void init(std::mt19937_64& rng);

 private:
  struct Path {
    std::size_t from = 0, to = 0;
    std::vector<ConvBn<T>> convs;
  };

  std::string name_;
  std::size_t branches_ = 0;
  bool passthrough_ = false;
  std::vector<Path> paths_;
  std::vector<BasicTensor<T>> outputs_;
};

// Per branch: k-tap stride-2 conv, 1x1 conv to twice the channels, global
// average pooling. Pooled descriptors are concatenated and classified.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::string name, std::size_t branches, std::size_t channels, std::size_t kernel,
                 std::size_t num_classes);

  BasicTensor<T> forward(const std::vector<BasicTensor<T>>& branches, Mode mode);
  std::vector<BasicTensor<T>> backward(const BasicTensor<T>& grad_logits);

  void collect(ParamRefs<T>& refs);
  void init(std::mt19937_64& rng);

 private:
  std::string name_;
  std::vector<ConvBn<T>> reduce_, widen_;
  Dense<T> classifier_;
  std::vector<std::size_t> pooled_lengths_;
  std::vector<std::size_t> widths_;
};

}  // namespace modclass::model

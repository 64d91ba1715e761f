#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "modclass/nn/tensor.hpp"

namespace modclass::nn {

enum class Padding { same, valid };
enum class Mode { train, infer };

struct PadAmounts {
  std::size_t left = 0;
  std::size_t right = 0;
};

// Output length of a 1-D convolution: ceil(L / stride) for same padding,
// floor((L - k) / stride) + 1 for valid. Returns 0 when no window fits.
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding);

// Zero padding for same mode; odd totals put the extra element on the right.
PadAmounts conv1d_padding(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding);

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip).
//
// input   [batch, length, c_in]
// weights [k, c_in, c_out]  (Shape{k, c_in, c_out})
// bias    [c_out]
//
// out[b, t, o] = bias[o] + sum_{j, c} x[b, t*stride + j - pad_left, c] * w[j, c, o]
// accumulated in ascending (j, c) order with fused multiply-adds.
// ---------------------------------------------------------------------------
template <typename T>
BasicTensor<T> conv1d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias,
                              std::size_t stride, Padding padding);

template <typename T>
struct Conv1dGrads {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
Conv1dGrads<T> conv1d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& weights, std::size_t stride, Padding padding,
                               bool want_input_grad = true);

// ---------------------------------------------------------------------------
// Batch normalization over (batch x length) per channel.
// ---------------------------------------------------------------------------
struct BatchNormOptions {
  double momentum = 0.1;  // weight of the new batch statistic in the running average
  double epsilon = 1e-3;
};

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> variance;

  static RunningStats identity(std::size_t channels) {
    return {std::vector<T>(channels, T{0}), std::vector<T>(channels, T{1})};
  }
};

template <typename T>
struct BatchNormCache {
  BasicTensor<T> normalized;
  std::vector<T> inv_std;
};

// Train mode normalizes with batch statistics, updates `stats` and fills
// `cache` when given. Infer mode normalizes with `stats` and leaves it alone.
template <typename T>
BasicTensor<T> batchnorm1d(const BasicTensor<T>& input, std::span<const T> gamma, std::span<const T> beta, Mode mode,
                           RunningStats<T>& stats, const BatchNormOptions& options,
                           BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm1d_backward(const BasicTensor<T>& grad_out, const BatchNormCache<T>& cache,
                                       std::span<const T> gamma);

// ---------------------------------------------------------------------------
// Elementwise activations. Backward passes take the cached forward output.
// sigmoid clamps to the open interval (0, 1) so saturated inputs still give a
// value strictly inside the range and a finite gradient.
// ---------------------------------------------------------------------------
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);
template <typename T>
T sigmoid(T x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);

// [b, W, C] -> [b, 1, C], z_c = mean over W.
template <typename T>
BasicTensor<T> global_avg_pool1d(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> global_avg_pool1d_backward(const BasicTensor<T>& grad_out, std::size_t length);

// Affine map over the channel axis: [b, L, n] x [n, m] -> [b, L, m].
// weights use Shape{1, n, m}.
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias);

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weights);

// Nearest-neighbour repetition along length.
template <typename T>
BasicTensor<T> upsample1d(const BasicTensor<T>& input, std::size_t factor);
template <typename T>
BasicTensor<T> upsample1d_backward(const BasicTensor<T>& grad_out, std::size_t factor);

// out[b, l, c] = scale[b, 0, c] * u[b, l, c]
template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& u, const BasicTensor<T>& scale);

template <typename T>
struct ChannelScaleGrads {
  BasicTensor<T> input;
  BasicTensor<T> scale;
};

template <typename T>
ChannelScaleGrads<T> channel_scale_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& u,
                                            const BasicTensor<T>& scale);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& x);

// Stacks tensors of equal batch and length along channels.
template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts);
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& whole, std::span<const std::size_t> widths);

// Row-wise softmax over the channel axis of [b, 1, K] (or [b, L, K]).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
struct LossResult {
  double loss = 0.0;  // mean negative log-likelihood over the batch
  BasicTensor<T> grad_logits;
};

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

}  // namespace modclass::nn

#include "modclass/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "modclass/nn/gemm.hpp"
#include "modclass/nn/parallel.hpp"

namespace modclass::nn {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape.batch) + ", " + std::to_string(shape.length) + ", " +
         std::to_string(shape.channels) + "]";
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0 || kernel == 0) return 0;
  if (padding == Padding::same) return (length + stride - 1) / stride;
  if (length < kernel) return 0;
  return (length - kernel) / stride + 1;
}

PadAmounts conv1d_padding(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding) {
  if (padding == Padding::valid) return {};
  const std::size_t out = conv1d_output_length(length, kernel, stride, padding);
  if (out == 0) return {};
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > length ? needed - length : 0;
  return {total / 2, total - total / 2};
}

namespace {

struct ConvGeometry {
  std::size_t length, kernel, stride, c_in, c_out, out_length;
  PadAmounts pad;
  std::size_t padded_length;
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::size_t stride,
                           Padding padding, const char* op) {
  const std::size_t kernel = weights.batch();
  if (kernel == 0) throw std::invalid_argument(std::string(op) + ": kernel size must be >= 1");
  if (stride == 0) throw std::invalid_argument(std::string(op) + ": stride must be >= 1");
  if (weights.length() != input.channels()) {
    throw std::invalid_argument(std::string(op) + ": weights expect " + std::to_string(weights.length()) +
                                " input channels, got " + std::to_string(input.channels()));
  }
  ConvGeometry g{};
  g.length = input.length();
  g.kernel = kernel;
  g.stride = stride;
  g.c_in = weights.length();
  g.c_out = weights.channels();
  g.out_length = conv1d_output_length(g.length, kernel, stride, padding);
  if (g.out_length == 0) {
    throw std::invalid_argument(std::string(op) + ": input length " + std::to_string(g.length) +
                                " too short for kernel " + std::to_string(kernel));
  }
  g.pad = conv1d_padding(g.length, kernel, stride, padding);
  g.padded_length = std::max(g.length + g.pad.left + g.pad.right, (g.out_length - 1) * stride + kernel);
  return g;
}

template <typename T>
void pad_sample(std::span<const T> x, const ConvGeometry& g, std::vector<T>& buffer) {
  buffer.assign(g.padded_length * g.c_in, T{0});
  std::copy(x.begin(), x.end(), buffer.begin() + static_cast<std::ptrdiff_t>(g.pad.left * g.c_in));
}

}  // namespace

template <typename T>
BasicTensor<T> conv1d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias,
                              std::size_t stride, Padding padding) {
  const ConvGeometry g = conv_geometry(input, weights, stride, padding, "conv1d_forward");
  if (bias.size() != g.c_out) throw std::invalid_argument("conv1d_forward: bias length mismatch");
  BasicTensor<T> out(Shape{input.batch(), g.out_length, g.c_out});
  const std::size_t depth = g.kernel * g.c_in;
  parallel_for(input.batch(), [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<T> padded;
    for (std::size_t b = begin; b < end; ++b) {
      pad_sample(input.sample(b), g, padded);
      auto y = out.sample(b);
      for (std::size_t t = 0; t < g.out_length; ++t) {
        std::copy(bias.begin(), bias.end(), y.begin() + static_cast<std::ptrdiff_t>(t * g.c_out));
      }
      StridedMatrix<T> windows{padded.data(), static_cast<std::ptrdiff_t>(g.stride * g.c_in), 1};
      gemm_accumulate<T>(g.out_length, g.c_out, depth, windows, weights.data(), static_cast<std::ptrdiff_t>(g.c_out),
                         y.data(), static_cast<std::ptrdiff_t>(g.c_out));
    }
  });
  ensure_finite(out, "conv1d_forward");
  return out;
}

template <typename T>
Conv1dGrads<T> conv1d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& weights, std::size_t stride, Padding padding,
                               bool want_input_grad) {
  const ConvGeometry g = conv_geometry(input, weights, stride, padding, "conv1d_backward");
  if (grad_out.shape() != Shape{input.batch(), g.out_length, g.c_out}) {
    throw std::invalid_argument("conv1d_backward: grad_out shape " + to_string(grad_out.shape()) +
                                " does not match forward output");
  }
  const std::size_t depth = g.kernel * g.c_in;
  Conv1dGrads<T> grads;
  grads.weights = BasicTensor<T>(weights.shape());
  grads.bias.assign(g.c_out, T{0});
  if (want_input_grad) grads.input = BasicTensor<T>(input.shape());

  // Transposed weights [c_out, k*c_in] so the input-gradient GEMM reads B row-major.
  std::vector<T> weights_t;
  if (want_input_grad) {
    weights_t.resize(depth * g.c_out);
    for (std::size_t p = 0; p < depth; ++p) {
      for (std::size_t o = 0; o < g.c_out; ++o) weights_t[o * depth + p] = weights.data()[p * g.c_out + o];
    }
  }

  const std::size_t chunks = chunk_count(input.batch());
  std::vector<std::vector<T>> partial_w(chunks);
  std::vector<std::vector<double>> partial_b(chunks);
  parallel_for(input.batch(), [&](std::size_t begin, std::size_t end, std::size_t worker) {
    std::vector<T>& dw = partial_w[worker];
    std::vector<double>& db = partial_b[worker];
    dw.assign(weights.size(), T{0});
    db.assign(g.c_out, 0.0);
    std::vector<T> padded;
    std::vector<T> columns;
    std::vector<T> padded_grad;
    for (std::size_t b = begin; b < end; ++b) {
      pad_sample(input.sample(b), g, padded);
      auto gy = grad_out.sample(b);
      // dW[p, o] += sum_t window(t, p) * gy[t, o]
      StridedMatrix<T> windows_t{padded.data(), 1, static_cast<std::ptrdiff_t>(g.stride * g.c_in)};
      gemm_accumulate<T>(depth, g.c_out, g.out_length, windows_t, gy.data(), static_cast<std::ptrdiff_t>(g.c_out),
                         dw.data(), static_cast<std::ptrdiff_t>(g.c_out));
      for (std::size_t t = 0; t < g.out_length; ++t) {
        for (std::size_t o = 0; o < g.c_out; ++o) db[o] += static_cast<double>(gy[t * g.c_out + o]);
      }
      if (!want_input_grad) continue;
      columns.assign(g.out_length * depth, T{0});
      StridedMatrix<T> gmat{gy.data(), static_cast<std::ptrdiff_t>(g.c_out), 1};
      gemm_accumulate<T>(g.out_length, depth, g.c_out, gmat, weights_t.data(), static_cast<std::ptrdiff_t>(depth),
                         columns.data(), static_cast<std::ptrdiff_t>(depth));
      padded_grad.assign(g.padded_length * g.c_in, T{0});
      for (std::size_t t = 0; t < g.out_length; ++t) {
        T* dst = padded_grad.data() + t * g.stride * g.c_in;
        const T* src = columns.data() + t * depth;
        for (std::size_t p = 0; p < depth; ++p) dst[p] += src[p];
      }
      auto dx = grads.input.sample(b);
      std::copy_n(padded_grad.begin() + static_cast<std::ptrdiff_t>(g.pad.left * g.c_in), dx.size(), dx.begin());
    }
  });
  std::vector<double> bias_acc(g.c_out, 0.0);
  for (std::size_t w = 0; w < chunks; ++w) {
    if (partial_w[w].empty()) continue;
    for (std::size_t i = 0; i < weights.size(); ++i) grads.weights.data()[i] += partial_w[w][i];
    for (std::size_t o = 0; o < g.c_out; ++o) bias_acc[o] += partial_b[w][o];
  }
  for (std::size_t o = 0; o < g.c_out; ++o) grads.bias[o] = static_cast<T>(bias_acc[o]);
  return grads;
}

// ---------------------------------------------------------------------------

namespace {

// Per-channel column sums over a rows x channels block, accumulated in double.
template <typename T>
void column_sums(const T* __restrict x, std::size_t rows, std::size_t channels, double* __restrict sum) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* __restrict row = x + r * channels;
    for (std::size_t c = 0; c < channels; ++c) sum[c] += static_cast<double>(row[c]);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> batchnorm1d(const BasicTensor<T>& input, std::span<const T> gamma, std::span<const T> beta, Mode mode,
                           RunningStats<T>& stats, const BatchNormOptions& options, BatchNormCache<T>* cache) {
  const std::size_t channels = input.channels();
  if (gamma.size() != channels || beta.size() != channels) {
    throw std::invalid_argument("batchnorm1d: gamma/beta length must equal channel count");
  }
  if (stats.mean.size() != channels || stats.variance.size() != channels) {
    throw std::invalid_argument("batchnorm1d: running statistics length must equal channel count");
  }
  const std::size_t rows = input.batch() * input.length();
  BasicTensor<T> out(input.shape());
  std::vector<T> inv_std(channels);
  std::vector<T> mean(channels);
  const T* __restrict x = input.data();

  if (mode == Mode::train) {
    if (rows < 2) throw std::invalid_argument("batchnorm1d: train mode needs batch x length >= 2");
    std::vector<double> mu(channels, 0.0);
    column_sums(x, rows, channels, mu.data());
    const double n = static_cast<double>(rows);
    for (double& m : mu) m /= n;
    std::vector<double> sq(channels, 0.0);
    {
      const double* __restrict m = mu.data();
      double* __restrict q = sq.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* __restrict row = x + r * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          const double d = static_cast<double>(row[c]) - m[c];
          q[c] += d * d;
        }
      }
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double var = sq[c] / n;
      mean[c] = static_cast<T>(mu[c]);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
      const double m = options.momentum;
      stats.mean[c] = static_cast<T>((1.0 - m) * static_cast<double>(stats.mean[c]) + m * mu[c]);
      stats.variance[c] =
          static_cast<T>((1.0 - m) * static_cast<double>(stats.variance[c]) + m * var * n / (n - 1.0));
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.variance[c]) + options.epsilon));
    }
  }

  T* __restrict y = out.data();
  const T* __restrict mp = mean.data();
  const T* __restrict ip = inv_std.data();
  const T* __restrict gp = gamma.data();
  const T* __restrict bp = beta.data();
  if (mode == Mode::train && cache != nullptr) {
    BasicTensor<T> normalized(input.shape());
    T* __restrict xhat = normalized.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        const T h = (x[i] - mp[c]) * ip[c];
        xhat[i] = h;
        y[i] = gp[c] * h + bp[c];
      }
    }
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        y[i] = gp[c] * ((x[i] - mp[c]) * ip[c]) + bp[c];
      }
    }
  }
  ensure_finite(out, "batchnorm1d");
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm1d_backward(const BasicTensor<T>& grad_out, const BatchNormCache<T>& cache,
                                       std::span<const T> gamma) {
  const std::size_t channels = grad_out.channels();
  if (grad_out.shape() != cache.normalized.shape() || cache.inv_std.size() != channels ||
      gamma.size() != channels) {
    throw std::invalid_argument("batchnorm1d_backward: shape mismatch with cached forward pass");
  }
  const std::size_t rows = grad_out.batch() * grad_out.length();
  const T* __restrict dy = grad_out.data();
  const T* __restrict xhat = cache.normalized.data();
  std::vector<double> sum_dy(channels, 0.0);
  std::vector<double> sum_dy_xhat(channels, 0.0);
  {
    double* __restrict s1 = sum_dy.data();
    double* __restrict s2 = sum_dy_xhat.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        s1[c] += static_cast<double>(dy[i]);
        s2[c] += static_cast<double>(dy[i]) * static_cast<double>(xhat[i]);
      }
    }
  }
  BatchNormGrads<T> grads;
  grads.gamma.resize(channels);
  grads.beta.resize(channels);
  grads.input = BasicTensor<T>(grad_out.shape());
  const double n = static_cast<double>(rows);
  std::vector<double> mean_dy(channels);
  std::vector<double> mean_dy_xhat(channels);
  std::vector<double> scale(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    grads.gamma[c] = static_cast<T>(sum_dy_xhat[c]);
    grads.beta[c] = static_cast<T>(sum_dy[c]);
    mean_dy[c] = sum_dy[c] / n;
    mean_dy_xhat[c] = sum_dy_xhat[c] / n;
    scale[c] = static_cast<double>(gamma[c]) * static_cast<double>(cache.inv_std[c]);
  }
  T* __restrict dx = grads.input.data();
  const double* __restrict md = mean_dy.data();
  const double* __restrict mdx = mean_dy_xhat.data();
  const double* __restrict sc = scale.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      const double v = static_cast<double>(dy[i]) - md[c] - static_cast<double>(xhat[i]) * mdx[c];
      dx[i] = static_cast<T>(sc[c] * v);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = x.data()[i] < T{0} ? T{0} : x.data()[i];  // NaN passes through
  ensure_finite(y, "relu");
  return y;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
  if (grad_out.shape() != output.shape()) throw std::invalid_argument("relu_backward: shape mismatch");
  BasicTensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = output.data()[i] > T{0} ? grad_out.data()[i] : T{0};
  return g;
}

template <typename T>
T sigmoid(T x) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
  const T y = x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
  return std::clamp(y, lo, hi);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = sigmoid(x.data()[i]);
  ensure_finite(y, "sigmoid");
  return y;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
  if (grad_out.shape() != output.shape()) throw std::invalid_argument("sigmoid_backward: shape mismatch");
  BasicTensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T s = output.data()[i];
    g.data()[i] = grad_out.data()[i] * s * (T{1} - s);
  }
  return g;
}

template <typename T>
BasicTensor<T> global_avg_pool1d(const BasicTensor<T>& input) {
  if (input.length() == 0) throw std::invalid_argument("global_avg_pool1d: empty length");
  const std::size_t channels = input.channels();
  BasicTensor<T> out(Shape{input.batch(), 1, channels});
  std::vector<double> acc(channels);
  for (std::size_t b = 0; b < input.batch(); ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    auto x = input.sample(b);
    for (std::size_t l = 0; l < input.length(); ++l) {
      for (std::size_t c = 0; c < channels; ++c) acc[c] += static_cast<double>(x[l * channels + c]);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      out.at(b, 0, c) = static_cast<T>(acc[c] / static_cast<double>(input.length()));
    }
  }
  ensure_finite(out, "global_avg_pool1d");
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool1d_backward(const BasicTensor<T>& grad_out, std::size_t length) {
  if (grad_out.length() != 1 || length == 0) throw std::invalid_argument("global_avg_pool1d_backward: bad shape");
  BasicTensor<T> g(Shape{grad_out.batch(), length, grad_out.channels()});
  const T inv = T{1} / static_cast<T>(length);
  for (std::size_t b = 0; b < g.batch(); ++b) {
    for (std::size_t l = 0; l < length; ++l) {
      for (std::size_t c = 0; c < g.channels(); ++c) g.at(b, l, c) = grad_out.at(b, 0, c) * inv;
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias) {
  if (weights.batch() != 1 || weights.length() != input.channels() || bias.size() != weights.channels()) {
    throw std::invalid_argument("dense_forward: weights " + to_string(weights.shape()) + " do not fit input " +
                                to_string(input.shape()));
  }
  const std::size_t rows = input.batch() * input.length();
  const std::size_t n = input.channels();
  const std::size_t m = weights.channels();
  BasicTensor<T> out(Shape{input.batch(), input.length(), m});
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias.begin(), bias.end(), out.data() + r * m);
  gemm_accumulate<T>(rows, m, n, StridedMatrix<T>{input.data(), static_cast<std::ptrdiff_t>(n), 1}, weights.data(),
                     static_cast<std::ptrdiff_t>(m), out.data(), static_cast<std::ptrdiff_t>(m));
  ensure_finite(out, "dense_forward");
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                             const BasicTensor<T>& weights) {
  const std::size_t rows = input.batch() * input.length();
  const std::size_t n = input.channels();
  const std::size_t m = weights.channels();
  if (grad_out.shape() != Shape{input.batch(), input.length(), m} || weights.length() != n) {
    throw std::invalid_argument("dense_backward: shape mismatch");
  }
  DenseGrads<T> grads;
  grads.weights = BasicTensor<T>(weights.shape());
  grads.input = BasicTensor<T>(input.shape());
  std::vector<double> db(m, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) db[j] += static_cast<double>(grad_out.data()[r * m + j]);
  }
  grads.bias.assign(db.begin(), db.end());
  // dW[n, m] = X^T G
  gemm_accumulate<T>(n, m, rows, StridedMatrix<T>{input.data(), 1, static_cast<std::ptrdiff_t>(n)}, grad_out.data(),
                     static_cast<std::ptrdiff_t>(m), grads.weights.data(), static_cast<std::ptrdiff_t>(m));
  // dX[rows, n] = G W^T
  std::vector<T> weights_t(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) weights_t[j * n + i] = weights.data()[i * m + j];
  }
  gemm_accumulate<T>(rows, n, m, StridedMatrix<T>{grad_out.data(), static_cast<std::ptrdiff_t>(m), 1},
                     weights_t.data(), static_cast<std::ptrdiff_t>(n), grads.input.data(),
                     static_cast<std::ptrdiff_t>(n));
  return grads;
}

template <typename T>
BasicTensor<T> upsample1d(const BasicTensor<T>& input, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("upsample1d: factor must be >= 1");
  const std::size_t channels = input.channels();
  BasicTensor<T> out(Shape{input.batch(), input.length() * factor, channels});
  for (std::size_t b = 0; b < input.batch(); ++b) {
    auto x = input.sample(b);
    auto y = out.sample(b);
    for (std::size_t l = 0; l < input.length(); ++l) {
      for (std::size_t r = 0; r < factor; ++r) {
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(l * channels), channels,
                    y.begin() + static_cast<std::ptrdiff_t>((l * factor + r) * channels));
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample1d_backward(const BasicTensor<T>& grad_out, std::size_t factor) {
  if (factor == 0 || grad_out.length() % factor != 0) {
    throw std::invalid_argument("upsample1d_backward: length not divisible by factor");
  }
  const std::size_t channels = grad_out.channels();
  BasicTensor<T> g(Shape{grad_out.batch(), grad_out.length() / factor, channels});
  for (std::size_t b = 0; b < g.batch(); ++b) {
    auto dy = grad_out.sample(b);
    auto dx = g.sample(b);
    for (std::size_t l = 0; l < g.length(); ++l) {
      for (std::size_t r = 0; r < factor; ++r) {
        for (std::size_t c = 0; c < channels; ++c) dx[l * channels + c] += dy[(l * factor + r) * channels + c];
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& u, const BasicTensor<T>& scale) {
  if (scale.shape() != Shape{u.batch(), 1, u.channels()}) {
    throw std::invalid_argument("channel_scale: scale must be [batch, 1, channels]");
  }
  BasicTensor<T> out(u.shape());
  const std::size_t channels = u.channels();
  for (std::size_t b = 0; b < u.batch(); ++b) {
    auto x = u.sample(b);
    auto y = out.sample(b);
    auto s = scale.sample(b);
    for (std::size_t l = 0; l < u.length(); ++l) {
      for (std::size_t c = 0; c < channels; ++c) y[l * channels + c] = s[c] * x[l * channels + c];
    }
  }
  return out;
}

template <typename T>
ChannelScaleGrads<T> channel_scale_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& u,
                                            const BasicTensor<T>& scale) {
  if (grad_out.shape() != u.shape() || scale.shape() != Shape{u.batch(), 1, u.channels()}) {
    throw std::invalid_argument("channel_scale_backward: shape mismatch");
  }
  ChannelScaleGrads<T> grads{channel_scale(grad_out, scale), BasicTensor<T>(scale.shape())};
  const std::size_t channels = u.channels();
  std::vector<double> acc(channels);
  for (std::size_t b = 0; b < u.batch(); ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    auto x = u.sample(b);
    auto dy = grad_out.sample(b);
    for (std::size_t l = 0; l < u.length(); ++l) {
      for (std::size_t c = 0; c < channels; ++c) {
        acc[c] += static_cast<double>(dy[l * channels + c]) * static_cast<double>(x[l * channels + c]);
      }
    }
    for (std::size_t c = 0; c < channels; ++c) grads.scale.at(b, 0, c) = static_cast<T>(acc[c]);
  }
  return grads;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BasicTensor<T> out = a;
  add_inplace(out, b);
  return out;
}

template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& x) {
  if (acc.shape() != x.shape()) {
    throw std::invalid_argument("add: shape mismatch " + to_string(acc.shape()) + " vs " + to_string(x.shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += x.data()[i];
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const std::size_t batch = parts[0].batch();
  const std::size_t length = parts[0].length();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.batch() != batch || p.length() != length) throw std::invalid_argument("concat_channels: shape mismatch");
    total += p.channels();
  }
  BasicTensor<T> out(Shape{batch, length, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < length; ++l) {
        for (std::size_t c = 0; c < p.channels(); ++c) out.at(b, l, offset + c) = p.at(b, l, c);
      }
    }
    offset += p.channels();
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& whole, std::span<const std::size_t> widths) {
  std::vector<BasicTensor<T>> parts;
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    BasicTensor<T> p(Shape{whole.batch(), whole.length(), w});
    for (std::size_t b = 0; b < whole.batch(); ++b) {
      for (std::size_t l = 0; l < whole.length(); ++l) {
        for (std::size_t c = 0; c < w; ++c) p.at(b, l, c) = whole.at(b, l, offset + c);
      }
    }
    offset += w;
    parts.push_back(std::move(p));
  }
  if (offset != whole.channels()) throw std::invalid_argument("split_channels: widths do not cover channels");
  return parts;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  BasicTensor<T> probs(logits.shape());
  const std::size_t k = logits.channels();
  const std::size_t rows = logits.batch() * logits.length();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * k;
    T* p = probs.data() + r * k;
    const double zmax = static_cast<double>(*std::max_element(z, z + k));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - zmax);
    for (std::size_t j = 0; j < k; ++j) p[j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - zmax) / sum);
  }
  return probs;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  const std::size_t k = logits.channels();
  const std::size_t rows = logits.batch() * logits.length();
  if (labels.size() != rows) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  if (rows == 0) throw std::invalid_argument("softmax_cross_entropy: empty batch");
  LossResult<T> result;
  result.grad_logits = BasicTensor<T>(logits.shape());
  double total = 0.0;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(k) + ")");
    }
    const T* z = logits.data() + r * k;
    T* g = result.grad_logits.data() + r * k;
    const double zmax = static_cast<double>(*std::max_element(z, z + k));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - zmax);
    const double log_sum = std::log(sum) + zmax;
    total += log_sum - static_cast<double>(z[label]);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(z[j]) - log_sum);
      g[j] = static_cast<T>((p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) * inv_rows);
    }
  }
  result.loss = total * inv_rows;
  if (!std::isfinite(result.loss)) throw NumericError("non-finite value produced by softmax_cross_entropy");
  return result;
}

#define MODCLASS_INSTANTIATE_OPS(T)                                                                                 \
  template BasicTensor<T> conv1d_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>,       \
                                            std::size_t, Padding);                                                  \
  template Conv1dGrads<T> conv1d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                             std::size_t, Padding, bool);                                           \
  template BasicTensor<T> batchnorm1d<T>(const BasicTensor<T>&, std::span<const T>, std::span<const T>, Mode,       \
                                         RunningStats<T>&, const BatchNormOptions&, BatchNormCache<T>*);            \
  template BatchNormGrads<T> batchnorm1d_backward<T>(const BasicTensor<T>&, const BatchNormCache<T>&,               \
                                                     std::span<const T>);                                           \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                                           \
  template BasicTensor<T> relu_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template T sigmoid<T>(T);                                                                                         \
  template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> sigmoid_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> global_avg_pool1d<T>(const BasicTensor<T>&);                                              \
  template BasicTensor<T> global_avg_pool1d_backward<T>(const BasicTensor<T>&, std::size_t);                        \
  template BasicTensor<T> dense_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>);       \
  template DenseGrads<T> dense_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> upsample1d<T>(const BasicTensor<T>&, std::size_t);                                        \
  template BasicTensor<T> upsample1d_backward<T>(const BasicTensor<T>&, std::size_t);                               \
  template BasicTensor<T> channel_scale<T>(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template ChannelScaleGrads<T> channel_scale_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                                          const BasicTensor<T>&);                                   \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
  template void add_inplace<T>(BasicTensor<T>&, const BasicTensor<T>&);                                             \
  template BasicTensor<T> concat_channels<T>(std::span<const BasicTensor<T>>);                                      \
  template std::vector<BasicTensor<T>> split_channels<T>(const BasicTensor<T>&, std::span<const std::size_t>);      \
  template BasicTensor<T> softmax<T>(const BasicTensor<T>&);                                                        \
  template LossResult<T> softmax_cross_entropy<T>(const BasicTensor<T>&, std::span<const int>);

MODCLASS_INSTANTIATE_OPS(float)
MODCLASS_INSTANTIATE_OPS(double)

#undef MODCLASS_INSTANTIATE_OPS

}  // namespace modclass::nn

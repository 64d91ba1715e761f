#include "modclass/model/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace modclass::model {

using nn::Shape;

template <typename T>
void he_uniform(ParamSlot<T>& weight, std::size_t fan_in, std::mt19937_64& rng) {
  // Draw in double through a fixed bit mapping so float and double models
  // initialised from the same seed hold the same values.
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& w : weight.value.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    w = static_cast<T>((2.0 * u - 1.0) * limit);
  }
}

namespace {

template <typename T>
void add_grad(ParamSlot<T>& slot, std::span<const T> g) {
  nn::accumulate_grad(slot, g);
}

template <typename T>
BasicTensor<T> decimate(const BasicTensor<T>& x, std::size_t factor) {
  const std::size_t channels = x.channels();
  BasicTensor<T> y(Shape{x.batch(), (x.length() + factor - 1) / factor, channels});
  for (std::size_t b = 0; b < x.batch(); ++b) {
    for (std::size_t l = 0; l < y.length(); ++l) {
      for (std::size_t c = 0; c < channels; ++c) y.at(b, l, c) = x.at(b, l * factor, c);
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> decimate_backward(const BasicTensor<T>& g, std::size_t factor, std::size_t length) {
  BasicTensor<T> dx(Shape{g.batch(), length, g.channels()});
  for (std::size_t b = 0; b < g.batch(); ++b) {
    for (std::size_t l = 0; l < g.length(); ++l) {
      for (std::size_t c = 0; c < g.channels(); ++c) dx.at(b, l * factor, c) = g.at(b, l, c);
    }
  }
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
ConvBn<T>::ConvBn(std::string name, std::size_t kernel, std::size_t c_in, std::size_t c_out, std::size_t stride,
                  bool relu)
    : name_(std::move(name)),
      stride_(stride),
      relu_(relu),
      weight_(name_ + ".conv.weight", Shape{kernel, c_in, c_out}),
      bias_(name_ + ".conv.bias", Shape{1, 1, c_out}),
      gamma_(name_ + ".bn.gamma", Shape{1, 1, c_out}),
      beta_(name_ + ".bn.beta", Shape{1, 1, c_out}),
      stats_(nn::RunningStats<T>::identity(c_out)) {
  gamma_.value.fill(T{1});
}

template <typename T>
BasicTensor<T> ConvBn<T>::forward(const BasicTensor<T>& x, Mode mode) {
  try {
    BasicTensor<T> z = nn::conv1d_forward<T>(x, weight_.value, bias_.value.values(), stride_, nn::Padding::same);
    BasicTensor<T> y = nn::batchnorm1d<T>(z, gamma_.value.values(), beta_.value.values(), mode, stats_, {},
                                          mode == Mode::train ? &bn_cache_ : nullptr);
    if (relu_) y = nn::relu(y);
    if (mode == Mode::train) {
      input_ = x;
      output_ = y;
    }
    return y;
  } catch (const nn::NumericError& e) {
    throw nn::NumericError(name_ + ": " + e.what());
  }
}

template <typename T>
BasicTensor<T> ConvBn<T>::backward(const BasicTensor<T>& grad, bool want_input_grad) {
  if (input_.empty()) throw std::logic_error(name_ + ": backward without a train-mode forward");
  BasicTensor<T> g = relu_ ? nn::relu_backward(grad, output_) : grad;
  auto bn = nn::batchnorm1d_backward<T>(g, bn_cache_, gamma_.value.values());
  add_grad<T>(gamma_, bn.gamma);
  add_grad<T>(beta_, bn.beta);
  auto conv = nn::conv1d_backward<T>(bn.input, input_, weight_.value, stride_, nn::Padding::same, want_input_grad);
  add_grad<T>(weight_, conv.weights.values());
  add_grad<T>(bias_, conv.bias);
  return std::move(conv.input);
}

template <typename T>
void ConvBn<T>::collect(ParamRefs<T>& refs) {
  refs.params.insert(refs.params.end(), {&weight_, &bias_, &gamma_, &beta_});
  refs.buffers.push_back({name_ + ".bn.running_mean", &stats_.mean});
  refs.buffers.push_back({name_ + ".bn.running_var", &stats_.variance});
}

template <typename T>
void ConvBn<T>::init(std::mt19937_64& rng) {
  he_uniform(weight_, weight_.value.batch() * weight_.value.length(), rng);
  bias_.value.fill(T{0});
  gamma_.value.fill(T{1});
  beta_.value.fill(T{0});
  stats_ = nn::RunningStats<T>::identity(out_channels());
}

// ---------------------------------------------------------------------------

template <typename T>
Dense<T>::Dense(std::string name, std::size_t in, std::size_t out)
    : name_(std::move(name)), weight_(name_ + ".weight", Shape{1, in, out}), bias_(name_ + ".bias", Shape{1, 1, out}) {}

template <typename T>
BasicTensor<T> Dense<T>::forward(const BasicTensor<T>& x, Mode mode) {
  try {
    if (mode == Mode::train) input_ = x;
    return nn::dense_forward<T>(x, weight_.value, bias_.value.values());
  } catch (const nn::NumericError& e) {
    throw nn::NumericError(name_ + ": " + e.what());
  }
}

template <typename T>
BasicTensor<T> Dense<T>::backward(const BasicTensor<T>& grad) {
  if (input_.empty()) throw std::logic_error(name_ + ": backward without a train-mode forward");
  auto g = nn::dense_backward<T>(grad, input_, weight_.value);
  add_grad<T>(weight_, g.weights.values());
  add_grad<T>(bias_, g.bias);
  return std::move(g.input);
}

template <typename T>
void Dense<T>::collect(ParamRefs<T>& refs) {
  refs.params.insert(refs.params.end(), {&weight_, &bias_});
}

template <typename T>
void Dense<T>::init(std::mt19937_64& rng) {
  he_uniform(weight_, weight_.value.length(), rng);
  bias_.value.fill(T{0});
}

// ---------------------------------------------------------------------------

template <typename T>
SeBlock<T>::SeBlock(std::string name, std::size_t channels, std::size_t reduction_ratio)
    : name_(std::move(name)), channels_(channels) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / std::max<std::size_t>(1, reduction_ratio));
  fc1_ = Dense<T>(name_ + ".fc1", channels, hidden);
  fc2_ = Dense<T>(name_ + ".fc2", hidden, channels);
}

template <typename T>
BasicTensor<T> SeBlock<T>::forward(const BasicTensor<T>& u, Mode mode) {
  squeeze_ = nn::global_avg_pool1d(u);
  hidden_ = nn::relu(fc1_.forward(squeeze_, mode));
  scale_ = nn::sigmoid(fc2_.forward(hidden_, mode));
  if (mode == Mode::train) input_ = u;
  return nn::channel_scale(u, scale_);
}

template <typename T>
BasicTensor<T> SeBlock<T>::backward(const BasicTensor<T>& grad) {
  if (input_.empty()) throw std::logic_error(name_ + ": backward without a train-mode forward");
  auto cs = nn::channel_scale_backward(grad, input_, scale_);
  BasicTensor<T> g = nn::sigmoid_backward(cs.scale, scale_);
  g = fc2_.backward(g);
  g = nn::relu_backward(g, hidden_);
  g = fc1_.backward(g);
  nn::add_inplace(cs.input, nn::global_avg_pool1d_backward(g, input_.length()));
  return std::move(cs.input);
}

template <typename T>
void SeBlock<T>::collect(ParamRefs<T>& refs) {
  fc1_.collect(refs);
  fc2_.collect(refs);
}

template <typename T>
void SeBlock<T>::init(std::mt19937_64& rng) {
  fc1_.init(rng);
  fc2_.init(rng);
}

// ---------------------------------------------------------------------------

template <typename T>
BottleneckBlock<T>::BottleneckBlock(std::string name, std::size_t kernel, std::size_t c_in, std::size_t width,
                                    std::size_t c_out, std::optional<std::size_t> se_reduction)
    : name_(std::move(name)),
      reduce_(name_ + ".reduce", 1, c_in, width, 1, true),
      main_(name_ + ".main", kernel, width, width, 2, true),
      expand_(name_ + ".expand", 1, width, c_out, 1, false),
      shortcut_(name_ + ".shortcut", 1, c_in, c_out, 2, false) {
  if (se_reduction) se_.emplace(name_ + ".se", c_out, *se_reduction);
}

template <typename T>
BasicTensor<T> BottleneckBlock<T>::forward(const BasicTensor<T>& x, Mode mode) {
  BasicTensor<T> y = expand_.forward(main_.forward(reduce_.forward(x, mode), mode), mode);
  if (se_) y = se_->forward(y, mode);
  nn::add_inplace(y, shortcut_.forward(x, mode));
  y = nn::relu(y);
  if (mode == Mode::train) output_ = y;
  return y;
}

template <typename T>
BasicTensor<T> BottleneckBlock<T>::backward(const BasicTensor<T>& grad) {
  BasicTensor<T> g = nn::relu_backward(grad, output_);
  BasicTensor<T> main_grad = se_ ? se_->backward(g) : g;
  main_grad = reduce_.backward(main_.backward(expand_.backward(main_grad)));
  nn::add_inplace(main_grad, shortcut_.backward(g));
  return main_grad;
}

template <typename T>
void BottleneckBlock<T>::collect(ParamRefs<T>& refs) {
  reduce_.collect(refs);
  main_.collect(refs);
  expand_.collect(refs);
  if (se_) se_->collect(refs);
  shortcut_.collect(refs);
}

template <typename T>
void BottleneckBlock<T>::init(std::mt19937_64& rng) {
  reduce_.init(rng);
  main_.init(rng);
  expand_.init(rng);
  if (se_) se_->init(rng);
  shortcut_.init(rng);
}

// ---------------------------------------------------------------------------

template <typename T>
MultiScaleFusion<T>::MultiScaleFusion(std::string name, std::size_t branches, std::size_t channels,
                                      std::size_t kernel, bool passthrough)
    : name_(std::move(name)), branches_(branches), passthrough_(passthrough) {
  for (std::size_t t = 0; t < branches; ++t) {
    for (std::size_t j = 0; j < branches; ++j) {
      if (j == t) continue;
      Path path{j, t, {}};
      const std::string base = name_ + ".to" + std::to_string(t) + ".from" + std::to_string(j);
      if (!passthrough) {
        if (j > t) {
          path.convs.emplace_back(base + ".up", 1, channels, channels, 1, false);
        } else {
          for (std::size_t step = 0; step < t - j; ++step) {
            const bool last = step + 1 == t - j;
            path.convs.emplace_back(base + ".down" + std::to_string(step), kernel, channels, channels, 2, !last);
          }
        }
      }
      paths_.push_back(std::move(path));
    }
  }
}

template <typename T>
std::vector<BasicTensor<T>> MultiScaleFusion<T>::forward(const std::vector<BasicTensor<T>>& branches, Mode mode) {
  if (branches.size() != branches_) {
    throw std::invalid_argument(name_ + ": expected " + std::to_string(branches_) + " branches, got " +
                                std::to_string(branches.size()));
  }
  for (std::size_t j = 1; j < branches.size(); ++j) {
    if (branches[j].length() * 2 != branches[j - 1].length()) {
      throw std::invalid_argument(name_ + ": branch " + std::to_string(j) + " has length " +
                                  std::to_string(branches[j].length()) + " but must be half of branch " +
                                  std::to_string(j - 1) + " (" + std::to_string(branches[j - 1].length()) + ")");
    }
  }

  std::vector<BasicTensor<T>> out(branches.begin(), branches.end());
  for (Path& path : paths_) {
    BasicTensor<T> y = branches[path.from];
    if (path.from > path.to) {
      for (ConvBn<T>& conv : path.convs) y = conv.forward(y, mode);
      y = nn::upsample1d(y, std::size_t{1} << (path.from - path.to));
    } else if (passthrough_) {
      y = decimate(y, std::size_t{1} << (path.to - path.from));
    } else {
      for (ConvBn<T>& conv : path.convs) y = conv.forward(y, mode);
    }
    nn::add_inplace(out[path.to], y);
  }
  for (auto& o : out) o = nn::relu(o);
  if (mode == Mode::train) outputs_ = out;
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> MultiScaleFusion<T>::backward(const std::vector<BasicTensor<T>>& grads) {
  if (outputs_.size() != branches_ || grads.size() != branches_) {
    throw std::logic_error(name_ + ": backward without a matching train-mode forward");
  }
  std::vector<BasicTensor<T>> pre(branches_);
  for (std::size_t t = 0; t < branches_; ++t) pre[t] = nn::relu_backward(grads[t], outputs_[t]);
  std::vector<BasicTensor<T>> dx = pre;
  for (auto it = paths_.rbegin(); it != paths_.rend(); ++it) {
    Path& path = *it;
    BasicTensor<T> g = pre[path.to];
    if (path.from > path.to) {
      g = nn::upsample1d_backward(g, std::size_t{1} << (path.from - path.to));
      for (auto c = path.convs.rbegin(); c != path.convs.rend(); ++c) g = c->backward(g);
    } else if (passthrough_) {
      g = decimate_backward(g, std::size_t{1} << (path.to - path.from), dx[path.from].length());
    } else {
      for (auto c = path.convs.rbegin(); c != path.convs.rend(); ++c) g = c->backward(g);
    }
    nn::add_inplace(dx[path.from], g);
  }
  return dx;
}

template <typename T>
void MultiScaleFusion<T>::collect(ParamRefs<T>& refs) {
  for (Path& path : paths_) {
    for (ConvBn<T>& conv : path.convs) conv.collect(refs);
  }
}

template <typename T>
void MultiScaleFusion<T>::init(std::mt19937_64& rng) {
  for (Path& path : paths_) {
    for (ConvBn<T>& conv : path.convs) conv.init(rng);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
ClassifierHead<T>::ClassifierHead(std::string name, std::size_t branches, std::size_t channels, std::size_t kernel,
                                  std::size_t num_classes)
    : name_(std::move(name)) {
  for (std::size_t t = 0; t < branches; ++t) {
    const std::string base = name_ + ".branch" + std::to_string(t);
    reduce_.emplace_back(base + ".reduce", kernel, channels, channels, 2, true);
    widen_.emplace_back(base + ".widen", 1, channels, 2 * channels, 1, true);
    widths_.push_back(2 * channels);
  }
  classifier_ = Dense<T>(name_ + ".classifier", 2 * channels * branches, num_classes);
}

template <typename T>
BasicTensor<T> ClassifierHead<T>::forward(const std::vector<BasicTensor<T>>& branches, Mode mode) {
  if (branches.size() != reduce_.size()) throw std::invalid_argument(name_ + ": branch count mismatch");
  std::vector<BasicTensor<T>> pooled;
  pooled_lengths_.clear();
  for (std::size_t t = 0; t < branches.size(); ++t) {
    BasicTensor<T> y = widen_[t].forward(reduce_[t].forward(branches[t], mode), mode);
    pooled_lengths_.push_back(y.length());
    pooled.push_back(nn::global_avg_pool1d(y));
  }
  return classifier_.forward(nn::concat_channels<T>(pooled), mode);
}

template <typename T>
std::vector<BasicTensor<T>> ClassifierHead<T>::backward(const BasicTensor<T>& grad_logits) {
  auto parts = nn::split_channels<T>(classifier_.backward(grad_logits), widths_);
  std::vector<BasicTensor<T>> dx;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    BasicTensor<T> g = nn::global_avg_pool1d_backward(parts[t], pooled_lengths_[t]);
    dx.push_back(reduce_[t].backward(widen_[t].backward(g)));
  }
  return dx;
}

template <typename T>
void ClassifierHead<T>::collect(ParamRefs<T>& refs) {
  for (std::size_t t = 0; t < reduce_.size(); ++t) {
    reduce_[t].collect(refs);
    widen_[t].collect(refs);
  }
  classifier_.collect(refs);
}

template <typename T>
void ClassifierHead<T>::init(std::mt19937_64& rng) {
  for (std::size_t t = 0; t < reduce_.size(); ++t) {
    reduce_[t].init(rng);
    widen_[t].init(rng);
  }
  classifier_.init(rng);
}

#define MODCLASS_INSTANTIATE_LAYERS(T)                                    \
  template void he_uniform<T>(ParamSlot<T>&, std::size_t, std::mt19937_64&); \
  template class ConvBn<T>;                                               \
  template class Dense<T>;                                                \
  template class SeBlock<T>;                                              \
  template class BottleneckBlock<T>;                                      \
  template class MultiScaleFusion<T>;                                     \
  template class ClassifierHead<T>;

MODCLASS_INSTANTIATE_LAYERS(float)
MODCLASS_INSTANTIATE_LAYERS(double)

}  // namespace modclass::model

#include "modclass/model/se_msfn.hpp"

#include <algorithm>
#include <stdexcept>

#include "modclass/common/binary_io.hpp"

namespace modclass::model {

using nn::Shape;

namespace {

constexpr const char* kFormatName = "se_msfn";

std::size_t conv_bn_params(std::size_t k, std::size_t c_in, std::size_t c_out) {
  return k * c_in * c_out + 3 * c_out;
}

std::size_t dense_params(std::size_t in, std::size_t out) { return in * out + out; }

template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t per = x.length() * x.channels();
  std::vector<T> values(x.values().begin() + static_cast<std::ptrdiff_t>(begin * per),
                        x.values().begin() + static_cast<std::ptrdiff_t>(end * per));
  return BasicTensor<T>(Shape{end - begin, x.length(), x.channels()}, std::move(values));
}

}  // namespace

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t k = c.kernel_size;
  const std::size_t w = c.base_filters;
  std::size_t total = conv_bn_params(k, c.input_channels, w) + conv_bn_params(k, w, w);
  std::size_t block = 3 * conv_bn_params(1, w, w) + conv_bn_params(k, w, w);
  if (c.se_enabled) {
    const std::size_t h = se_hidden_width(w, c.reduction_ratio);
    block += dense_params(w, h) + dense_params(h, w);
  }
  std::size_t fusion = 0;
  for (std::size_t t = 0; t < c.blocks; ++t) {
    for (std::size_t j = 0; j < c.blocks; ++j) {
      if (j > t) fusion += conv_bn_params(1, w, w);
      if (j < t) fusion += (t - j) * conv_bn_params(k, w, w);
    }
  }
  total += c.repetition * (c.blocks * block + fusion);
  total += c.blocks * (conv_bn_params(k, w, w) + conv_bn_params(1, w, 2 * w));
  total += dense_params(2 * w * c.blocks, c.num_classes);
  return total;
}

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& scores) {
  const std::size_t rows = scores.batch() * scores.length();
  const std::size_t k = scores.channels();
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = scores.data() + r * k;
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
SeMsfnModel<T>::SeMsfnModel(const ModelConfig& config, bool passthrough_fusion) : config_(config) {
  validate(config_);
  const std::size_t k = config_.kernel_size;
  const std::size_t w = config_.base_filters;
  stem1_ = ConvBn<T>("stem.conv1", k, config_.input_channels, w, 1, true);
  stem2_ = ConvBn<T>("stem.conv2", k, w, w, 1, true);
  std::optional<std::size_t> se;
  if (config_.se_enabled) se = config_.reduction_ratio;
  for (std::size_t s = 0; s < config_.repetition; ++s) {
    const std::string prefix = "stage" + std::to_string(s);
    Stage stage;
    for (std::size_t i = 0; i < config_.blocks; ++i) {
      stage.blocks.emplace_back(prefix + ".block" + std::to_string(i), k, w, w, w, se);
    }
    stage.fusion = MultiScaleFusion<T>(prefix + ".fusion", config_.blocks, w, k, passthrough_fusion);
    stages_.push_back(std::move(stage));
  }
  head_ = ClassifierHead<T>("head", config_.blocks, w, k, config_.num_classes);
  rebuild_refs();
}

template <typename T>
SeMsfnModel<T>::SeMsfnModel(SeMsfnModel&& other) noexcept
    : config_(other.config_),
      stem1_(std::move(other.stem1_)),
      stem2_(std::move(other.stem2_)),
      stages_(std::move(other.stages_)),
      head_(std::move(other.head_)) {
  rebuild_refs();
}

template <typename T>
SeMsfnModel<T>& SeMsfnModel<T>::operator=(SeMsfnModel&& other) noexcept {
  config_ = other.config_;
  stem1_ = std::move(other.stem1_);
  stem2_ = std::move(other.stem2_);
  stages_ = std::move(other.stages_);
  head_ = std::move(other.head_);
  rebuild_refs();
  return *this;
}

template <typename T>
void SeMsfnModel<T>::rebuild_refs() {
  refs_ = {};
  stem1_.collect(refs_);
  stem2_.collect(refs_);
  for (Stage& stage : stages_) {
    for (auto& block : stage.blocks) block.collect(refs_);
    stage.fusion.collect(refs_);
  }
  head_.collect(refs_);
}

template <typename T>
std::size_t SeMsfnModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : refs_.params) n += p->size();
  return n;
}

template <typename T>
void SeMsfnModel<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  stem1_.init(rng);
  stem2_.init(rng);
  for (Stage& stage : stages_) {
    for (auto& block : stage.blocks) block.init(rng);
    stage.fusion.init(rng);
  }
  head_.init(rng);
  for (auto* p : refs_.params) {
    p->adam_m.fill(T{0});
    p->adam_v.fill(T{0});
    p->step_count = 0;
  }
  zero_grad();
}

template <typename T>
void SeMsfnModel<T>::zero_grad() {
  for (auto* p : refs_.params) nn::zero_grad(*p);
}

template <typename T>
BasicTensor<T> SeMsfnModel<T>::forward(const BasicTensor<T>& x, Mode mode) {
  if (x.length() != config_.input_length || x.channels() != config_.input_channels) {
    throw std::invalid_argument("model expects input [batch, " + std::to_string(config_.input_length) + ", " +
                                std::to_string(config_.input_channels) + "], got " + nn::to_string(x.shape()));
  }
  if (x.batch() == 0) throw std::invalid_argument("model input has an empty batch");
  BasicTensor<T> h = stem2_.forward(stem1_.forward(x, mode), mode);
  std::vector<BasicTensor<T>> fused;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    Stage& stage = stages_[s];
    std::vector<BasicTensor<T>> outs;
    for (std::size_t i = 0; i < stage.blocks.size(); ++i) {
      const BasicTensor<T>& in = s == 0 ? (i == 0 ? h : outs.back()) : fused[i];
      outs.push_back(stage.blocks[i].forward(in, mode));
    }
    fused = stage.fusion.forward(outs, mode);
  }
  BasicTensor<T> logits = head_.forward(fused, mode);
  nn::ensure_finite(logits, "model output");
  return logits;
}

template <typename T>
void SeMsfnModel<T>::backward(const BasicTensor<T>& grad_logits) {
  std::vector<BasicTensor<T>> grads = head_.backward(grad_logits);
  for (std::size_t s = stages_.size(); s-- > 0;) {
    Stage& stage = stages_[s];
    std::vector<BasicTensor<T>> block_grads = stage.fusion.backward(grads);
    if (s > 0) {
      for (std::size_t i = 0; i < stage.blocks.size(); ++i) grads[i] = stage.blocks[i].backward(block_grads[i]);
      continue;
    }
    // Stage 0 is a chain: block i also feeds block i + 1.
    BasicTensor<T> carry;
    for (std::size_t i = stage.blocks.size(); i-- > 0;) {
      BasicTensor<T> g = std::move(block_grads[i]);
      if (!carry.empty()) nn::add_inplace(g, carry);
      carry = stage.blocks[i].backward(g);
    }
    stem1_.backward(stem2_.backward(carry), false);
  }
  for (const auto* p : refs_.params) {
    if (!nn::all_finite(p->grad.values())) throw nn::NumericError("non-finite gradient in " + p->name);
  }
}

template <typename T>
BasicTensor<T> SeMsfnModel<T>::predict_proba(const BasicTensor<T>& x, std::size_t chunk) {
  chunk = std::max<std::size_t>(1, chunk);
  BasicTensor<T> out(Shape{x.batch(), 1, config_.num_classes});
  for (std::size_t begin = 0; begin < x.batch(); begin += chunk) {
    const std::size_t end = std::min(x.batch(), begin + chunk);
    BasicTensor<T> p = nn::softmax(forward(slice_batch(x, begin, end), Mode::infer));
    std::copy(p.values().begin(), p.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(begin * config_.num_classes));
  }
  return out;
}

template <typename T>
std::vector<int> SeMsfnModel<T>::predict(const BasicTensor<T>& x, std::size_t chunk) {
  return argmax_rows(predict_proba(x, chunk));
}

template <typename T>
nn::Checkpoint SeMsfnModel<T>::to_checkpoint(const nlohmann::json& extras) {
  nn::Checkpoint ck;
  ck.header = extras.is_object() ? extras : nlohmann::json::object();
  ck.header["format"] = kFormatName;
  ck.header["model"] = config_;
  ck.header["parameter_count"] = parameter_count();
  for (const auto* p : refs_.params) {
    ck.blobs.push_back({p->name, nn::BlobKind::parameter, p->value.shape(),
                        std::vector<float>(p->value.values().begin(), p->value.values().end())});
  }
  for (const auto& b : refs_.buffers) {
    ck.blobs.push_back({b.name, nn::BlobKind::buffer, Shape{1, 1, b.values->size()},
                        std::vector<float>(b.values->begin(), b.values->end())});
  }
  return ck;
}

template <typename T>
SeMsfnModel<T> SeMsfnModel<T>::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.header.value("format", std::string{}) != kFormatName || !ck.header.contains("model")) {
    throw FormatError("checkpoint header does not describe an " + std::string(kFormatName) + " model");
  }
  SeMsfnModel model(ck.header.at("model").get<ModelConfig>());
  auto fetch = [&](const std::string& name, nn::BlobKind kind, std::size_t size) -> const nn::NamedBlob& {
    const nn::NamedBlob* blob = ck.find(name);
    if (blob == nullptr || blob->kind != kind) throw FormatError("checkpoint is missing " + name);
    if (blob->values.size() != size) {
      throw FormatError("checkpoint entry " + name + " has " + std::to_string(blob->values.size()) +
                        " values, model expects " + std::to_string(size));
    }
    return *blob;
  };
  for (auto* p : model.refs_.params) {
    const auto& blob = fetch(p->name, nn::BlobKind::parameter, p->size());
    std::transform(blob.values.begin(), blob.values.end(), p->value.values().begin(),
                   [](float v) { return static_cast<T>(v); });
  }
  for (auto& b : model.refs_.buffers) {
    const auto& blob = fetch(b.name, nn::BlobKind::buffer, b.values->size());
    std::transform(blob.values.begin(), blob.values.end(), b.values->begin(),
                   [](float v) { return static_cast<T>(v); });
  }
  if (ck.parameter_count() != model.parameter_count()) {
    throw FormatError("checkpoint carries " + std::to_string(ck.parameter_count()) + " parameters, model has " +
                      std::to_string(model.parameter_count()));
  }
  return model;
}

template class SeMsfnModel<float>;
template class SeMsfnModel<double>;
template std::vector<int> argmax_rows<float>(const BasicTensor<float>&);
template std::vector<int> argmax_rows<double>(const BasicTensor<double>&);

}  // namespace modclass::model

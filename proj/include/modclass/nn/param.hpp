#pragma once

#include <cstdint>
#include <string>

#include "modclass/nn/tensor.hpp"

namespace modclass::nn {

// A trainable array with its gradient and Adam moments, all of one shape.
template <typename T>
struct ParamSlot {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> adam_m;
  BasicTensor<T> adam_v;
  std::int64_t step_count = 0;

  ParamSlot() = default;
  ParamSlot(std::string slot_name, Shape shape)
      : name(std::move(slot_name)), value(shape), grad(shape), adam_m(shape), adam_v(shape) {}

  std::size_t size() const { return value.size(); }
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update. The gradient is left in place; call zero_grad
// before accumulating the next one.
template <typename T>
void adam_step(ParamSlot<T>& slot, const AdamOptions& options);

template <typename T>
void zero_grad(ParamSlot<T>& slot) {
  slot.grad.fill(T{0});
}

// Adds `g` into the slot gradient elementwise.
template <typename T>
void accumulate_grad(ParamSlot<T>& slot, std::span<const T> g);

}  // namespace modclass::nn

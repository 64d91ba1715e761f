#include "modclass/nn/param.hpp"

#include <cmath>
#include <stdexcept>

namespace modclass::nn {

template <typename T>
void adam_step(ParamSlot<T>& slot, const AdamOptions& options) {
  ++slot.step_count;
  const double t = static_cast<double>(slot.step_count);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  T* p = slot.value.data();
  const T* g = slot.grad.data();
  T* m = slot.adam_m.data();
  T* v = slot.adam_v.data();
  for (std::size_t i = 0; i < slot.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = options.beta1 * static_cast<double>(m[i]) + (1.0 - options.beta1) * gi;
    const double vi = options.beta2 * static_cast<double>(v[i]) + (1.0 - options.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / correction1;
    const double v_hat = vi / correction2;
    p[i] = static_cast<T>(static_cast<double>(p[i]) -
                          options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon));
  }
}

template <typename T>
void accumulate_grad(ParamSlot<T>& slot, std::span<const T> g) {
  if (g.size() != slot.size()) {
    throw std::invalid_argument("gradient for " + slot.name + " has " + std::to_string(g.size()) +
                                " entries, expected " + std::to_string(slot.size()));
  }
  T* dst = slot.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template void adam_step<float>(ParamSlot<float>&, const AdamOptions&);
template void adam_step<double>(ParamSlot<double>&, const AdamOptions&);
template void accumulate_grad<float>(ParamSlot<float>&, std::span<const float>);
template void accumulate_grad<double>(ParamSlot<double>&, std::span<const double>);

}  // namespace modclass::nn

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "modclass/nn/tensor.hpp"

namespace testing_support {

using modclass::nn::BasicTensor;
using modclass::nn::Shape;

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  BasicTensor<T> t(shape);
  for (T& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

// Fixed random projection used as a scalar loss: sum_i w_i * y_i.
inline std::vector<double> projection(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(n);
  for (double& v : w) v = u(rng);
  return w;
}

template <typename T>
double project(const BasicTensor<T>& y, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * static_cast<double>(y.data()[i]);
  return s;
}

template <typename T>
BasicTensor<T> projection_grad(Shape shape, const std::vector<double>& w) {
  BasicTensor<T> g(shape);
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = static_cast<T>(w[i]);
  return g;
}

template <typename T>
std::vector<double> to_double(std::span<const T> v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace testing_support

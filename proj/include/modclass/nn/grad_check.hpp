#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace modclass::nn {

// Scalar loss evaluated at a flat f64 parameter vector.
using LossFunction = std::function<double(std::span<const double>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;

  bool within(double tolerance) const { return max_relative_error < tolerance; }
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares `analytic` against central differences (f(x+h) - f(x-h)) / 2h of
// `loss` around `point`. When `indices` is non-empty only those coordinates
// are probed. Throws NumericError if the loss is non-finite at any probe.
GradCheckResult grad_check(const LossFunction& loss, std::span<const double> point, std::span<const double> analytic,
                           double step = 1e-3, std::span<const std::size_t> indices = {});

}  // namespace modclass::nn

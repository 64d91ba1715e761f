#include "modclass/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "modclass/nn/tensor.hpp"

namespace modclass::nn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const LossFunction& loss, std::span<const double> point, std::span<const double> analytic,
                           double step, std::span<const std::size_t> indices) {
  if (analytic.size() != point.size()) throw std::invalid_argument("grad_check: gradient/point size mismatch");
  std::vector<double> probe(point.begin(), point.end());
  GradCheckResult result;
  auto check_one = [&](std::size_t i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = loss(probe);
    probe[i] = original - step;
    const double down = loss(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i])) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric);
    if (err > result.max_relative_error || result.checked == 0) {
      result.max_relative_error = std::max(err, result.max_relative_error);
      if (err >= result.max_relative_error) {
        result.worst_index = i;
        result.analytic_at_worst = analytic[i];
        result.numeric_at_worst = numeric;
      }
    }
    ++result.checked;
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < point.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : indices) {
      if (i >= point.size()) throw std::out_of_range("grad_check: index out of range");
      check_one(i);
    }
  }
  return result;
}

}  // namespace modclass::nn

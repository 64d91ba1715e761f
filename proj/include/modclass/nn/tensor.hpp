#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace modclass::nn {

// Raised when a forward or backward pass produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t channels = 0;

  constexpr std::size_t size() const { return batch * length * channels; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

// Dense rank-3 array laid out row-major as [batch, length, channels].
// Weights reuse the same container with the axes read as [k, c_in, c_out].
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(shape), values_(shape.size(), T{0}) {}
  BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
      throw std::invalid_argument("tensor: " + std::to_string(values_.size()) +
                                  " values do not fill shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t batch() const { return shape_.batch; }
  std::size_t length() const { return shape_.length; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  T& at(std::size_t b, std::size_t l, std::size_t c) {
    return values_[(b * shape_.length + l) * shape_.channels + c];
  }
  const T& at(std::size_t b, std::size_t l, std::size_t c) const {
    return values_[(b * shape_.length + l) * shape_.channels + c];
  }

  // The [length, channels] slab belonging to one batch element.
  std::span<T> sample(std::size_t b) {
    const std::size_t n = shape_.length * shape_.channels;
    return std::span<T>(values_).subspan(b * n, n);
  }
  std::span<const T> sample(std::size_t b) const {
    const std::size_t n = shape_.length * shape_.channels;
    return std::span<const T>(values_).subspan(b * n, n);
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  // Same values viewed under a different shape of equal size.
  BasicTensor reshaped(Shape shape) const& { return BasicTensor(shape, values_); }
  BasicTensor reshaped(Shape shape) && { return BasicTensor(shape, std::move(values_)); }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

 private:
  Shape shape_{};
  std::vector<T> values_;
};

using Tensor = BasicTensor<float>;

// Checks the exponent field directly; an integer OR-reduction vectorizes
// where a loop over std::isfinite does not.
template <typename T>
bool all_finite(std::span<const T> values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exponent = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : values) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & exponent) == exponent);
  return bad == 0;
}

// Throws NumericError naming `where` when any entry is NaN or Inf.
template <typename T>
void ensure_finite(const BasicTensor<T>& t, std::string_view where) {
  if (!all_finite(t.values())) {
    throw NumericError("non-finite value produced by " + std::string(where));
  }
}

}  // namespace modclass::nn

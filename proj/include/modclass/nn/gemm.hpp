#pragma once

#include <cstddef>

namespace modclass::nn {

// Read-only matrix addressed as data[m * row_stride + k * col_stride].
template <typename T>
struct StridedMatrix {
  const T* data = nullptr;
  std::ptrdiff_t row_stride = 0;
  std::ptrdiff_t col_stride = 1;

  const T& operator()(std::size_t m, std::size_t k) const {
    return data[static_cast<std::ptrdiff_t>(m) * row_stride + static_cast<std::ptrdiff_t>(k) * col_stride];
  }
};

// C[i, j] += sum_p A(i, p) * B[p * ldb + j] for an M x N block of C.
//
// Every output element is reduced in ascending p with one fused
// multiply-add per term, starting from the value already in C. The result is
// therefore identical to the scalar loop
//   for p: c = std::fma(a(i, p), b[p][j], c);
// regardless of the vector width or blocking used here.
template <typename T>
void gemm_accumulate(std::size_t rows, std::size_t cols, std::size_t depth, StridedMatrix<T> a, const T* b,
                     std::ptrdiff_t ldb, T* c, std::ptrdiff_t ldc);

}  // namespace modclass::nn

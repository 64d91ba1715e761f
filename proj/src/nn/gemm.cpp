#include "modclass/nn/gemm.hpp"

#include <cmath>

#if __has_include(<experimental/simd>)
#include <experimental/simd>
#define MODCLASS_HAVE_SIMD 1
#endif

namespace modclass::nn {

namespace {

constexpr std::size_t kMaxRows = 8;

template <typename T>
void scalar_block(std::size_t rows, std::size_t col_begin, std::size_t col_end, std::size_t depth,
                  StridedMatrix<T> a, const T* b, std::ptrdiff_t ldb, T* c, std::ptrdiff_t ldc) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = col_begin; j < col_end; ++j) {
      T acc = c[static_cast<std::ptrdiff_t>(i) * ldc + static_cast<std::ptrdiff_t>(j)];
      for (std::size_t p = 0; p < depth; ++p) {
        acc = std::fma(a(i, p), b[static_cast<std::ptrdiff_t>(p) * ldb + static_cast<std::ptrdiff_t>(j)], acc);
      }
      c[static_cast<std::ptrdiff_t>(i) * ldc + static_cast<std::ptrdiff_t>(j)] = acc;
    }
  }
}

#ifdef MODCLASS_HAVE_SIMD
#if defined(__clang__)
#define MODCLASS_UNROLL _Pragma("unroll")
#elif defined(__GNUC__)
#define MODCLASS_UNROLL _Pragma("GCC unroll 16")
#else
#define MODCLASS_UNROLL
#endif

namespace stdx = std::experimental;

// Register tile of Rows x (NVec * lanes) accumulators kept live across the
// whole reduction.
template <typename T, std::size_t Rows, std::size_t NVec>
void micro_tile(std::size_t depth, StridedMatrix<T> a, const T* b, std::ptrdiff_t ldb, T* c, std::ptrdiff_t ldc) {
  using V = stdx::native_simd<T>;
  constexpr std::size_t lanes = V::size();
  V acc[Rows][NVec];
  for (std::size_t r = 0; r < Rows; ++r) {
    for (std::size_t v = 0; v < NVec; ++v) {
      acc[r][v].copy_from(c + static_cast<std::ptrdiff_t>(r) * ldc + v * lanes, stdx::element_aligned);
    }
  }
  const T* ap = a.data;
  const std::ptrdiff_t rs = a.row_stride, cs = a.col_stride;
  for (std::size_t p = 0; p < depth; ++p, ap += cs) {
    const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
    V bv[NVec];
    for (std::size_t v = 0; v < NVec; ++v) bv[v].copy_from(brow + v * lanes, stdx::element_aligned);
MODCLASS_UNROLL
    for (std::size_t r = 0; r < Rows; ++r) {
      const V av(ap[static_cast<std::ptrdiff_t>(r) * rs]);
MODCLASS_UNROLL
      for (std::size_t v = 0; v < NVec; ++v) acc[r][v] = stdx::fma(av, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    for (std::size_t v = 0; v < NVec; ++v) {
      acc[r][v].copy_to(c + static_cast<std::ptrdiff_t>(r) * ldc + v * lanes, stdx::element_aligned);
    }
  }
}

template <typename T, std::size_t NVec>
void column_panel(std::size_t rows, std::size_t depth, StridedMatrix<T> a, const T* b, std::ptrdiff_t ldb, T* c,
                  std::ptrdiff_t ldc) {
  std::size_t i = 0;
  for (; i + kMaxRows <= rows; i += kMaxRows) {
    StridedMatrix<T> sub{a.data + static_cast<std::ptrdiff_t>(i) * a.row_stride, a.row_stride, a.col_stride};
    micro_tile<T, kMaxRows, NVec>(depth, sub, b, ldb, c + static_cast<std::ptrdiff_t>(i) * ldc, ldc);
  }
  if (i == rows) return;
  StridedMatrix<T> sub{a.data + static_cast<std::ptrdiff_t>(i) * a.row_stride, a.row_stride, a.col_stride};
  T* csub = c + static_cast<std::ptrdiff_t>(i) * ldc;
  switch (rows - i) {
    case 1: micro_tile<T, 1, NVec>(depth, sub, b, ldb, csub, ldc); break;
    case 2: micro_tile<T, 2, NVec>(depth, sub, b, ldb, csub, ldc); break;
    case 3: micro_tile<T, 3, NVec>(depth, sub, b, ldb, csub, ldc); break;
    case 4: micro_tile<T, 4, NVec>(depth, sub, b, ldb, csub, ldc); break;
    case 5: micro_tile<T, 5, NVec>(depth, sub, b, ldb, csub, ldc); break;
    case 6: micro_tile<T, 6, NVec>(depth, sub, b, ldb, csub, ldc); break;
    default: micro_tile<T, 7, NVec>(depth, sub, b, ldb, csub, ldc); break;
  }
}
#endif

}  // namespace

template <typename T>
void gemm_accumulate(std::size_t rows, std::size_t cols, std::size_t depth, StridedMatrix<T> a, const T* b,
                     std::ptrdiff_t ldb, T* c, std::ptrdiff_t ldc) {
  if (rows == 0 || cols == 0 || depth == 0) return;
  std::size_t j = 0;
#ifdef MODCLASS_HAVE_SIMD
  constexpr std::size_t lanes = stdx::native_simd<T>::size();
  for (; j + 2 * lanes <= cols; j += 2 * lanes) column_panel<T, 2>(rows, depth, a, b + j, ldb, c + j, ldc);
  for (; j + lanes <= cols; j += lanes) column_panel<T, 1>(rows, depth, a, b + j, ldb, c + j, ldc);
#endif
  if (j < cols) scalar_block(rows, j, cols, depth, a, b, ldb, c, ldc);
}

template void gemm_accumulate<float>(std::size_t, std::size_t, std::size_t, StridedMatrix<float>, const float*,
                                     std::ptrdiff_t, float*, std::ptrdiff_t);
template void gemm_accumulate<double>(std::size_t, std::size_t, std::size_t, StridedMatrix<double>, const double*,
                                      std::ptrdiff_t, double*, std::ptrdiff_t);

}  // namespace modclass::nn

#pragma once

#include <cblas.h>

#include <cstddef>
#include <type_traits>

namespace mtbca::detail {

// C[M,N] += A[M,K] * B[K,N]. A is addressed as A[i*a_rs + k*a_cs] so that a
// transposed operand costs nothing; B and C are row-major. Every caller has
// one unit stride in A, which maps onto a plain or transposed BLAS operand.
template <typename T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t a_rs,
              std::size_t a_cs, const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  if (M == 0 || N == 0 || K == 0) return;
  const bool plain = a_cs == 1;
  if (!plain && a_rs != 1) {
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * a_rs + k * a_cs];
        for (std::size_t j = 0; j < N; ++j) C[i * ldc + j] += a * B[k * ldb + j];
      }
    return;
  }
  const auto op = plain ? CblasNoTrans : CblasTrans;
  // A stride along a length-1 axis is never used, but BLAS still checks it.
  const auto lda = static_cast<blasint>(plain ? (M == 1 ? K : a_rs) : (K == 1 ? M : a_cs));
  const auto m = static_cast<blasint>(M), n = static_cast<blasint>(N), k = static_cast<blasint>(K);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, op, CblasNoTrans, m, n, k, 1.0f, A, lda, B, static_cast<blasint>(ldb), 1.0f, C,
                static_cast<blasint>(ldc));
  } else {
    static_assert(std::is_same_v<T, double>, "gemm_acc supports float and double");
    cblas_dgemm(CblasRowMajor, op, CblasNoTrans, m, n, k, 1.0, A, lda, B, static_cast<blasint>(ldb), 1.0, C,
                static_cast<blasint>(ldc));
  }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock)
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = r0 + kBlock < rows ? r0 + kBlock : rows;
      const std::size_t c1 = c0 + kBlock < cols ? c0 + kBlock : cols;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

}  // namespace mtbca::detail

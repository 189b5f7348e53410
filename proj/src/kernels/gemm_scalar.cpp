#include "mcnn/kernels/gemm.hpp"

namespace mcnn::kernels::scalar {
namespace {

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, int m, int n, int k, const T* a, int lda,
               const T* b, int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  // i-p-j order: every C element accumulates its k products in increasing p,
  // the same order the vector kernel uses.
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const T av = trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                           : a[static_cast<std::ptrdiff_t>(i) * lda + p];
      if (!trans_b) {
        const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      }
    }
  }
}

template <typename T>
T dot_impl(const T* x, const T* y, std::size_t n) {
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy_impl(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
              const float* b, int ldb, float beta, float* c, int ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
}

void gemm_f64(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
              const double* b, int ldb, double beta, double* c, int ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
}

float dot_f32(const float* x, const float* y, std::size_t n) { return dot_impl(x, y, n); }
double dot_f64(const double* x, const double* y, std::size_t n) { return dot_impl(x, y, n); }
void axpy_f32(float alpha, const float* x, float* y, std::size_t n) { axpy_impl(alpha, x, y, n); }
void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  axpy_impl(alpha, x, y, n);
}

}  // namespace mcnn::kernels::scalar

// AVX2/FMA float kernels. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after the runtime check in dispatch.cpp.
#include <immintrin.h>

#include <vector>

#include "mcnn/kernels/gemm.hpp"

namespace mcnn::kernels::avx2 {
namespace {

// Lane masks for the ragged right edge, indexed by the number of live lanes.
__m256i tail_mask(int live) {
  alignas(32) static const int kTable[16] = {-1, -1, -1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kTable + 8 - live));
}

// Packs the transpose of a rows x cols row-major block into dst (cols x rows).
void pack_transpose(const float* src, int rows, int cols, int ld, std::vector<float>& dst) {
  dst.resize(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const float* s = src + static_cast<std::ptrdiff_t>(r) * ld;
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = s[c];
  }
}

inline __m256 load_c(const float* p, __m256i mask, bool full) {
  return full ? _mm256_loadu_ps(p) : _mm256_maskload_ps(p, mask);
}
inline void store_c(float* p, __m256 v, __m256i mask, bool full) {
  if (full) {
    _mm256_storeu_ps(p, v);
  } else {
    _mm256_maskstore_ps(p, mask, v);
  }
}

// C[rows x cols] = A * B + beta * C on a panel of up to 4 rows and 16 columns.
template <int Rows>
void micro(int k, const float* a, int lda, const float* b, int ldb, float beta, float* c, int ldc,
           int cols) {
  const bool full0 = cols >= 8;
  const bool full1 = cols >= 16;
  const bool has1 = cols > 8;
  const __m256i m0 = tail_mask(full0 ? 8 : cols);
  const __m256i m1 = tail_mask(has1 ? (full1 ? 8 : cols - 8) : 0);
  __m256 acc0[Rows];
  __m256 acc1[Rows];
  for (int r = 0; r < Rows; ++r) {
    acc0[r] = _mm256_setzero_ps();
    acc1[r] = _mm256_setzero_ps();
  }
  for (int p = 0; p < k; ++p) {
    const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
    const __m256 b0 = full0 ? _mm256_loadu_ps(brow) : _mm256_maskload_ps(brow, m0);
    const __m256 b1 = has1 ? (full1 ? _mm256_loadu_ps(brow + 8) : _mm256_maskload_ps(brow + 8, m1))
                           : _mm256_setzero_ps();
    for (int r = 0; r < Rows; ++r) {
      const __m256 av = _mm256_set1_ps(a[static_cast<std::ptrdiff_t>(r) * lda + p]);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      if (has1) acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  const __m256 vb = _mm256_set1_ps(beta);
  for (int r = 0; r < Rows; ++r) {
    float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
    __m256 v0 = acc0[r];
    if (beta != 0.0f) v0 = _mm256_fmadd_ps(vb, load_c(crow, m0, full0), v0);
    store_c(crow, v0, m0, full0);
    if (has1) {
      __m256 v1 = acc1[r];
      if (beta != 0.0f) v1 = _mm256_fmadd_ps(vb, load_c(crow + 8, m1, full1), v1);
      store_c(crow + 8, v1, m1, full1);
    }
  }
}

void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float beta,
             float* c, int ldc) {
  for (int j = 0; j < n; j += 16) {
    const int cols = n - j < 16 ? n - j : 16;
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      micro<4>(k, a + static_cast<std::ptrdiff_t>(i) * lda, lda, b + j, ldb, beta,
               c + static_cast<std::ptrdiff_t>(i) * ldc + j, ldc, cols);
    }
    for (; i < m; ++i) {
      micro<1>(k, a + static_cast<std::ptrdiff_t>(i) * lda, lda, b + j, ldb, beta,
               c + static_cast<std::ptrdiff_t>(i) * ldc + j, ldc, cols);
    }
  }
}

}  // namespace

bool compiled() { return true; }

void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
              const float* b, int ldb, float beta, float* c, int ldc) {
  if (m <= 0 || n <= 0) return;
  thread_local std::vector<float> pack_a;
  thread_local std::vector<float> pack_b;
  if (trans_a) {
    pack_transpose(a, k, m, lda, pack_a);
    a = pack_a.data();
    lda = k;
  }
  if (trans_b) {
    pack_transpose(b, n, k, ldb, pack_b);
    b = pack_b.data();
    ldb = n;
  }
  gemm_nn(m, n, k, a, lda, b, ldb, beta, c, ldc);
}

float dot_f32(const float* x, const float* y, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, acc);
  float s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace mcnn::kernels::avx2

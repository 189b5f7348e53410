#pragma once
// Dense matrix kernels used by the tensor engine.
//
// Every kernel has a scalar reference implementation. Float kernels also
// have an AVX2/FMA variant that is chosen at runtime when the CPU supports
// it. Double kernels are only used for gradient checking and always run the
// scalar path.
//
// Layout: row-major with explicit leading dimensions. The transposition
// flags refer to the stored operand, i.e. trans_a means op(A) = A^T where A
// is stored k x m.

#include <cstddef>
#include <string_view>

namespace mcnn::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

/// Best variant the running CPU supports (and this build compiled).
Isa detected_isa();

/// Variant used by the dispatching entry points. Starts as detected_isa()
/// unless MCNN_FORCE_SCALAR=1 is set in the environment.
Isa active_isa();

/// Throws std::invalid_argument if the requested variant is unavailable.
void set_active_isa(Isa isa);

/// RAII override of the active variant, mostly for tests.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa);
  ~ScopedIsa();
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

// C = op(A) * op(B) + beta * C, with op(A) m x k and op(B) k x n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

// y += alpha * x
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);

namespace scalar {
void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
              const float* b, int ldb, float beta, float* c, int ldc);
void gemm_f64(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
              const double* b, int ldb, double beta, double* c, int ldc);
float dot_f32(const float* x, const float* y, std::size_t n);
double dot_f64(const double* x, const double* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
bool compiled();
void gemm_f32(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
              const float* b, int ldb, float beta, float* c, int ldc);
float dot_f32(const float* x, const float* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
}  // namespace avx2

}  // namespace mcnn::kernels

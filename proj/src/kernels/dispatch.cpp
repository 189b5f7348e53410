#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "mcnn/kernels/gemm.hpp"

namespace mcnn::kernels {

#ifndef MCNN_HAVE_AVX2
namespace avx2 {
bool compiled() { return false; }
void gemm_f32(bool, bool, int, int, int, const float*, int, const float*, int, float, float*, int) {
  throw std::logic_error("AVX2 kernels not compiled");
}
float dot_f32(const float*, const float*, std::size_t) {
  throw std::logic_error("AVX2 kernels not compiled");
}
void axpy_f32(float, const float*, float*, std::size_t) {
  throw std::logic_error("AVX2 kernels not compiled");
}
}  // namespace avx2
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("MCNN_FORCE_SCALAR"); env && std::strcmp(env, "0") != 0) {
    return Isa::Scalar;
  }
  return detected_isa();
}

Isa& active_slot() {
  static Isa isa = initial_isa();
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = (avx2::compiled() && cpu_has_avx2()) ? Isa::Avx2 : Isa::Scalar;
  return isa;
}

Isa active_isa() { return active_slot(); }

void set_active_isa(Isa isa) {
  if (isa == Isa::Avx2 && detected_isa() != Isa::Avx2) {
    throw std::invalid_argument("AVX2 kernels are not available on this machine");
  }
  active_slot() = isa;
}

ScopedIsa::ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
ScopedIsa::~ScopedIsa() { active_slot() = previous_; }

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b,
          int ldb, float beta, float* c, int ldc) {
  if (active_isa() == Isa::Avx2) {
    avx2::gemm_f32(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
  } else {
    scalar::gemm_f32(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
  }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  scalar::gemm_f64(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
}

float dot(const float* x, const float* y, std::size_t n) {
  return active_isa() == Isa::Avx2 ? avx2::dot_f32(x, y, n) : scalar::dot_f32(x, y, n);
}
double dot(const double* x, const double* y, std::size_t n) { return scalar::dot_f64(x, y, n); }

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  if (active_isa() == Isa::Avx2) {
    avx2::axpy_f32(alpha, x, y, n);
  } else {
    scalar::axpy_f32(alpha, x, y, n);
  }
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  scalar::axpy_f64(alpha, x, y, n);
}

}  // namespace mcnn::kernels

#include "ctxtts/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)
#include <arm_neon.h>

namespace ctxtts::kernels {
namespace {

struct F32x4 {
  using scalar = float;
  using reg = float32x4_t;
  static constexpr std::size_t width = 4;
  static reg zero() { return vdupq_n_f32(0.0f); }
  static reg set1(float v) { return vdupq_n_f32(v); }
  static reg load(const float* p) { return vld1q_f32(p); }
  static void store(float* p, reg v) { vst1q_f32(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return vfmaq_f32(c, a, b); }
  static reg sub(reg a, reg b) { return vsubq_f32(a, b); }
  static float hsum(reg v) { return vaddvq_f32(v); }
};

struct F64x2 {
  using scalar = double;
  using reg = float64x2_t;
  static constexpr std::size_t width = 2;
  static reg zero() { return vdupq_n_f64(0.0); }
  static reg set1(double v) { return vdupq_n_f64(v); }
  static reg load(const double* p) { return vld1q_f64(p); }
  static void store(double* p, reg v) { vst1q_f64(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return vfmaq_f64(c, a, b); }
  static reg sub(reg a, reg b) { return vsubq_f64(a, b); }
  static double hsum(reg v) { return vaddvq_f64(v); }
};

template <typename V>
void axpy(std::size_t n, typename V::scalar a, const typename V::scalar* x,
          typename V::scalar* y) {
  constexpr std::size_t W = V::width;
  const auto av = V::set1(a);
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

template <typename V>
typename V::scalar dot(std::size_t n, const typename V::scalar* x,
                       const typename V::scalar* y) {
  constexpr std::size_t W = V::width;
  auto acc = V::zero();
  std::size_t i = 0;
  for (; i + W <= n; i += W) acc = V::fmadd(V::load(x + i), V::load(y + i), acc);
  typename V::scalar s = V::hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename V>
typename V::scalar sq_dist(std::size_t n, const typename V::scalar* x,
                           const typename V::scalar* y) {
  constexpr std::size_t W = V::width;
  auto acc = V::zero();
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    const auto d = V::sub(V::load(x + i), V::load(y + i));
    acc = V::fmadd(d, d, acc);
  }
  typename V::scalar s = V::hsum(acc);
  for (; i < n; ++i) {
    const auto d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

template <typename V>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const typename V::scalar* a, std::size_t lda,
             const typename V::scalar* b, std::size_t ldb,
             typename V::scalar* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      axpy<V>(n, a[i * lda + p], b + p * ldb, c + i * ldc);
    }
  }
}

template <typename V>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const typename V::scalar* a, std::size_t lda,
             const typename V::scalar* b, std::size_t ldb,
             typename V::scalar* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * ldc + j] += dot<V>(k, a + i * lda, b + j * ldb);
    }
  }
}

template <typename V>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const typename V::scalar* a, std::size_t lda,
             const typename V::scalar* b, std::size_t ldb,
             typename V::scalar* c, std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      axpy<V>(n, a[p * lda + i], b + p * ldb, c + i * ldc);
    }
  }
}

template <typename V>
constexpr Table<typename V::scalar> kTable{
    Isa::kNeon,  &axpy<V>,    &dot<V>,    &sq_dist<V>,
    &gemm_nn<V>, &gemm_nt<V>, &gemm_tn<V>};

}  // namespace

template <>
const Table<float>* neon_table<float>() {
  return &kTable<F32x4>;
}
template <>
const Table<double>* neon_table<double>() {
  return &kTable<F64x2>;
}

}  // namespace ctxtts::kernels

#else

namespace ctxtts::kernels {
template <>
const Table<float>* neon_table<float>() {
  return nullptr;
}
template <>
const Table<double>* neon_table<double>() {
  return nullptr;
}
}  // namespace ctxtts::kernels

#endif

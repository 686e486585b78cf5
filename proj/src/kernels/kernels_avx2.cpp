// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "ctxtts/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace ctxtts::kernels {
namespace {

struct F32x8 {
  using scalar = float;
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

struct F64x4 {
  using scalar = double;
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

template <typename V>
void axpy(std::size_t n, typename V::scalar a, const typename V::scalar* x,
          typename V::scalar* y) {
  constexpr std::size_t W = V::width;
  const auto av = V::set1(a);
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
    V::store(y + i + W, V::fmadd(av, V::load(x + i + W), V::load(y + i + W)));
  }
  for (; i + W <= n; i += W) {
    V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

template <typename V>
typename V::scalar dot(std::size_t n, const typename V::scalar* x,
                       const typename V::scalar* y) {
  constexpr std::size_t W = V::width;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), acc1);
  }
  for (; i + W <= n; i += W) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  }
  typename V::scalar s = V::hsum(acc0) + V::hsum(acc1);
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

// 4 rows x 2 vectors register block.
template <typename V>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const typename V::scalar* a, std::size_t lda,
             const typename V::scalar* b, std::size_t ldb,
             typename V::scalar* c, std::size_t ldc) {
  using T = typename V::scalar;
  constexpr std::size_t W = V::width;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + (i + 0) * lda;
    const T* a1 = a + (i + 1) * lda;
    const T* a2 = a + (i + 2) * lda;
    const T* a3 = a + (i + 3) * lda;
    T* c0 = c + (i + 0) * ldc;
    T* c1 = c + (i + 1) * ldc;
    T* c2 = c + (i + 2) * ldc;
    T* c3 = c + (i + 3) * ldc;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
      auto r00 = V::load(c0 + j), r01 = V::load(c0 + j + W);
      auto r10 = V::load(c1 + j), r11 = V::load(c1 + j + W);
      auto r20 = V::load(c2 + j), r21 = V::load(c2 + j + W);
      auto r30 = V::load(c3 + j), r31 = V::load(c3 + j + W);
      for (std::size_t p = 0; p < k; ++p) {
        const T* bp = b + p * ldb + j;
        const auto b0 = V::load(bp);
        const auto b1 = V::load(bp + W);
        auto av = V::set1(a0[p]);
        r00 = V::fmadd(av, b0, r00);
        r01 = V::fmadd(av, b1, r01);
        av = V::set1(a1[p]);
        r10 = V::fmadd(av, b0, r10);
        r11 = V::fmadd(av, b1, r11);
        av = V::set1(a2[p]);
        r20 = V::fmadd(av, b0, r20);
        r21 = V::fmadd(av, b1, r21);
        av = V::set1(a3[p]);
        r30 = V::fmadd(av, b0, r30);
        r31 = V::fmadd(av, b1, r31);
      }
      V::store(c0 + j, r00), V::store(c0 + j + W, r01);
      V::store(c1 + j, r10), V::store(c1 + j + W, r11);
      V::store(c2 + j, r20), V::store(c2 + j + W, r21);
      V::store(c3 + j, r30), V::store(c3 + j + W, r31);
    }
    for (; j + W <= n; j += W) {
      auto r0 = V::load(c0 + j), r1 = V::load(c1 + j);
      auto r2 = V::load(c2 + j), r3 = V::load(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const auto bv = V::load(b + p * ldb + j);
        r0 = V::fmadd(V::set1(a0[p]), bv, r0);
        r1 = V::fmadd(V::set1(a1[p]), bv, r1);
        r2 = V::fmadd(V::set1(a2[p]), bv, r2);
        r3 = V::fmadd(V::set1(a3[p]), bv, r3);
      }
      V::store(c0 + j, r0), V::store(c1 + j, r1);
      V::store(c2 + j, r2), V::store(c3 + j, r3);
    }
    for (; j < n; ++j) {
      T s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const T bv = b[p * ldb + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
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
    const auto* arow = a + p * lda;
    const auto* brow = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      axpy<V>(n, arow[i], brow, c + i * ldc);
    }
  }
}

template <typename V>
constexpr Table<typename V::scalar> kTable{
    Isa::kAvx2,  &axpy<V>,    &dot<V>,    &sq_dist<V>,
    &gemm_nn<V>, &gemm_nt<V>, &gemm_tn<V>};

}  // namespace

template <>
const Table<float>* avx2_table<float>() {
  return &kTable<F32x8>;
}
template <>
const Table<double>* avx2_table<double>() {
  return &kTable<F64x4>;
}

}  // namespace ctxtts::kernels

#else

namespace ctxtts::kernels {
template <>
const Table<float>* avx2_table<float>() {
  return nullptr;
}
template <>
const Table<double>* avx2_table<double>() {
  return nullptr;
}
}  // namespace ctxtts::kernels

#endif

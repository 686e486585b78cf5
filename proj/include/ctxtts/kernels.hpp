#pragma once
// Dense inner-loop kernels with a scalar reference implementation and
// SIMD variants (AVX2+FMA on x86-64, NEON on aarch64) picked at runtime.
//
// All matrices are row-major. GEMM variants accumulate into C.

#include <cstddef>
#include <string_view>

namespace ctxtts::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

template <typename T>
struct Table {
  Isa isa;
  // y += a * x
  void (*axpy)(std::size_t n, T a, const T* x, T* y);
  T (*dot)(std::size_t n, const T* x, const T* y);
  // sum_i (x_i - y_i)^2
  T (*sq_dist)(std::size_t n, const T* x, const T* y);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc);
};

template <typename T>
const Table<T>& scalar_table();

// nullptr when the variant was not compiled into this binary.
template <typename T>
const Table<T>* avx2_table();
template <typename T>
const Table<T>* neon_table();

template <>
const Table<float>* avx2_table<float>();
template <>
const Table<double>* avx2_table<double>();
template <>
const Table<float>* neon_table<float>();
template <>
const Table<double>* neon_table<double>();

// True when the variant is compiled in and the running CPU can execute it.
bool isa_supported(Isa isa);

// Best ISA supported by both the binary and the running CPU. The
// CTXTTS_ISA environment variable ("scalar", "avx2", "neon") can force a
// lower one.
Isa detect_isa();

// Table selected once per process from detect_isa().
template <typename T>
const Table<T>& active();

// Table for an explicit ISA; falls back to scalar when unavailable.
template <typename T>
const Table<T>& table_for(Isa isa);

}  // namespace ctxtts::kernels

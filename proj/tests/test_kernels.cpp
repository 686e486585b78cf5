#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "ctxtts/kernels.hpp"

using namespace ctxtts::kernels;

namespace {

template <typename T>
std::vector<T> rand_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = T(u(rng));
  return v;
}

template <typename T>
double tol() {
  return sizeof(T) == 4 ? 2e-6 : 1e-14;
}

// Every variant this process can run, besides scalar.
template <typename T>
std::vector<const Table<T>*> variants() {
  std::vector<const Table<T>*> out;
  for (Isa isa : {Isa::kAvx2, Isa::kNeon}) {
    if (isa_supported(isa)) out.push_back(&table_for<T>(isa));
  }
  return out;
}

template <typename T>
void check_vector_ops(const Table<T>& v) {
  const auto& s = scalar_table<T>();
  std::mt19937_64 rng(7);
  for (std::size_t n = 0; n <= 70; ++n) {
    const auto x = rand_vec<T>(n, rng), y0 = rand_vec<T>(n, rng);
    double scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::abs(double(x[i]) * double(y0[i]));
    CHECK(std::abs(double(v.dot(n, x.data(), y0.data()) - s.dot(n, x.data(), y0.data()))) <= tol<T>() * scale);
    double dscale = 1.0;
    for (std::size_t i = 0; i < n; ++i) dscale += std::pow(double(x[i]) - double(y0[i]), 2);
    CHECK(std::abs(double(v.sq_dist(n, x.data(), y0.data()) - s.sq_dist(n, x.data(), y0.data()))) <=
          tol<T>() * dscale);
    auto ya = y0, yb = y0;
    v.axpy(n, T(0.37), x.data(), ya.data());
    s.axpy(n, T(0.37), x.data(), yb.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(double(ya[i] - yb[i])) <= tol<T>() * 4);
  }
}

template <typename T>
void check_gemm(const Table<T>& v) {
  const auto& s = scalar_table<T>();
  std::mt19937_64 rng(11);
  for (std::size_t m : {1, 3, 8, 17}) {
    for (std::size_t n : {1, 5, 16, 33}) {
      for (std::size_t k : {1, 7, 32, 41}) {
        const auto a = rand_vec<T>(m * k, rng), b = rand_vec<T>(k * n, rng), c0 = rand_vec<T>(m * n, rng);
        const double bound = tol<T>() * double(k + 1) * 4;
        auto run = [&](auto fn_v, auto fn_s, std::size_t lda, std::size_t ldb) {
          auto cv = c0, cs = c0;
          fn_v(m, n, k, a.data(), lda, b.data(), ldb, cv.data(), n);
          fn_s(m, n, k, a.data(), lda, b.data(), ldb, cs.data(), n);
          for (std::size_t i = 0; i < cv.size(); ++i) CHECK(std::abs(double(cv[i] - cs[i])) <= bound);
        };
        run(v.gemm_nn, s.gemm_nn, k, n);
        run(v.gemm_nt, s.gemm_nt, k, k);  // b read as [n x k]
        run(v.gemm_tn, s.gemm_tn, m, n);  // a read as [k x m]
      }
    }
  }
}

}  // namespace

TEST_CASE("scalar kernels match textbook definitions") {
  const auto& s = scalar_table<double>();
  const double x[] = {1, 2, 3}, y[] = {4, -5, 6};
  CHECK(s.dot(3, x, y) == 1 * 4 - 2 * 5 + 3 * 6);
  CHECK(s.sq_dist(3, x, y) == 9 + 49 + 9);
  double z[] = {1, 1, 1};
  s.axpy(3, 2.0, x, z);
  CHECK(z[0] == 3);
  CHECK(z[2] == 7);
  // [2x2] * [2x2]
  const double a[] = {1, 2, 3, 4}, b[] = {5, 6, 7, 8};
  double c[] = {0, 0, 0, 0};
  s.gemm_nn(2, 2, 2, a, 2, b, 2, c, 2);
  CHECK(c[0] == 19);
  CHECK(c[1] == 22);
  CHECK(c[2] == 43);
  CHECK(c[3] == 50);
  double ct[] = {0, 0, 0, 0};
  s.gemm_nt(2, 2, 2, a, 2, b, 2, ct, 2);  // a * b^T
  CHECK(ct[0] == 17);
  CHECK(ct[1] == 23);
  double tn[] = {0, 0, 0, 0};
  s.gemm_tn(2, 2, 2, a, 2, b, 2, tn, 2);  // a^T * b
  CHECK(tn[0] == 26);
  CHECK(tn[1] == 30);
}

TEST_CASE("SIMD variants agree with the scalar reference (float)") {
  for (const auto* t : variants<float>()) {
    INFO("isa " << isa_name(t->isa));
    check_vector_ops(*t);
    check_gemm(*t);
  }
}

TEST_CASE("SIMD variants agree with the scalar reference (double)") {
  for (const auto* t : variants<double>()) {
    INFO("isa " << isa_name(t->isa));
    check_vector_ops(*t);
    check_gemm(*t);
  }
}

TEST_CASE("dispatch reports a consistent ISA") {
  const Isa isa = detect_isa();
  CHECK(active<float>().isa == isa);
  CHECK(active<double>().isa == isa);
  CHECK(isa_supported(isa));
  CHECK(table_for<float>(Isa::kScalar).isa == Isa::kScalar);
  CHECK(isa_name(Isa::kScalar) == "scalar");
}

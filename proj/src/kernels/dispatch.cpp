#include <cstdlib>
#include <string>

#include "ctxtts/kernels.hpp"

namespace ctxtts::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return avx2_table<float>() != nullptr && cpu_has_avx2();
    case Isa::kNeon:
      // Architecturally mandatory on aarch64.
      return neon_table<float>() != nullptr;
  }
  return false;
}

namespace {

Isa best_available() {
  if (isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  if (isa_supported(Isa::kNeon)) return Isa::kNeon;
  return Isa::kScalar;
}

}  // namespace

Isa detect_isa() {
  const Isa best = best_available();
  const char* forced = std::getenv("CTXTTS_ISA");
  if (forced == nullptr) return best;
  const std::string want(forced);
  if (want == "scalar") return Isa::kScalar;
  if (want == "avx2" && best == Isa::kAvx2) return Isa::kAvx2;
  if (want == "neon" && best == Isa::kNeon) return Isa::kNeon;
  return best;
}

template <typename T>
const Table<T>& table_for(Isa isa) {
  const Table<T>* t = nullptr;
  if (isa == Isa::kAvx2) t = avx2_table<T>();
  if (isa == Isa::kNeon) t = neon_table<T>();
  return t != nullptr ? *t : scalar_table<T>();
}

template <typename T>
const Table<T>& active() {
  static const Table<T>& selected = table_for<T>(detect_isa());
  return selected;
}

template const Table<float>& table_for<float>(Isa);
template const Table<double>& table_for<double>(Isa);
template const Table<float>& active<float>();
template const Table<double>& active<double>();

}  // namespace ctxtts::kernels

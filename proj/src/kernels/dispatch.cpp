#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "windformer/kernels.hpp"

namespace windformer::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa initial_isa() {
  // WINDFORMER_ISA=scalar pins the reference path for a whole process.
  if (const char* env = std::getenv("WINDFORMER_ISA")) {
    const std::string value(env);
    if (value == "scalar") return Isa::scalar;
  }
  return detected_isa();
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

Isa detected_isa() {
  if (avx2::compiled() && cpu_has_avx2()) return Isa::avx2;
  return Isa::scalar;
}

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2)
    throw std::invalid_argument("AVX2 kernels are not available on this machine");
  active_slot().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelSet<T>& kernel_set(Isa isa) {
  return isa == Isa::avx2 ? avx2::table<T>() : scalar::table<T>();
}

template const KernelSet<float>& kernel_set<float>(Isa);
template const KernelSet<double>& kernel_set<double>(Isa);

}  // namespace windformer::kernels

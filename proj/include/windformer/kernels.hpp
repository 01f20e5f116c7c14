#pragma once

// Dense inner-loop kernels with a scalar reference path and an AVX2 path.
//
// Every kernel vectorizes across independent outputs only, so each output
// element sees the same sequence of IEEE operations on every path. The two
// paths are therefore bit-identical (the build disables FP contraction and the
// SIMD code uses separate mul/add rather than FMA).

#include <cstddef>
#include <string_view>

namespace windformer::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best instruction set supported by the running CPU and compiled in.
Isa detected_isa();

/// Instruction set used by the dispatching wrappers below.
Isa active_isa();

/// Overrides the dispatch target. Throws std::invalid_argument if the CPU
/// (or the build) cannot run `isa`.
void set_active_isa(Isa isa);

/// Scoped override, restores the previous target on destruction.
class IsaGuard {
 public:
  explicit IsaGuard(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
  ~IsaGuard() { set_active_isa(previous_); }
  IsaGuard(const IsaGuard&) = delete;
  IsaGuard& operator=(const IsaGuard&) = delete;

 private:
  Isa previous_;
};

template <typename T>
struct KernelSet {
  // C[m x n] (+)= A[m x k] * B[k x n], all row-major and densely packed.
  // Per output: acc = 0 (or C), then acc = acc + a[i,p] * b[p,j] for p = 0..k-1.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate);
  // y[i] = y[i] + alpha * x[i]
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  // out[i] = a[i] * b[i]
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);
  // y[i] = y[i] + a[i] * b[i]
  void (*mul_acc)(std::size_t n, const T* a, const T* b, T* y);
};

template <typename T>
const KernelSet<T>& kernel_set(Isa isa);

template <typename T>
const KernelSet<T>& active_kernels() {
  return kernel_set<T>(active_isa());
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate = false) {
  active_kernels<T>().gemm(m, n, k, a, b, c, accumulate);
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  active_kernels<T>().axpy(n, alpha, x, y);
}

template <typename T>
void mul(std::size_t n, const T* a, const T* b, T* out) {
  active_kernels<T>().mul(n, a, b, out);
}

template <typename T>
void mul_acc(std::size_t n, const T* a, const T* b, T* y) {
  active_kernels<T>().mul_acc(n, a, b, y);
}

namespace scalar {
template <typename T>
const KernelSet<T>& table();
}  // namespace scalar

namespace avx2 {
bool compiled();
template <typename T>
const KernelSet<T>& table();
}  // namespace avx2

}  // namespace windformer::kernels

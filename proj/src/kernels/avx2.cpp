#include "windformer/kernels.hpp"

#include <algorithm>
#include <stdexcept>

#if defined(__AVX2__)
#include <immintrin.h>
#define WINDFORMER_HAVE_AVX2 1
#else
#define WINDFORMER_HAVE_AVX2 0
#endif

namespace windformer::kernels::avx2 {

#if WINDFORMER_HAVE_AVX2
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using type = __m256;
  static constexpr std::size_t width = 8;
  static type zero() { return _mm256_setzero_ps(); }
  static type load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, type v) { _mm256_storeu_ps(p, v); }
  static type broadcast(float v) { return _mm256_set1_ps(v); }
  static type add(type a, type b) { return _mm256_add_ps(a, b); }
  static type mul(type a, type b) { return _mm256_mul_ps(a, b); }
};

template <>
struct Vec<double> {
  using type = __m256d;
  static constexpr std::size_t width = 4;
  static type zero() { return _mm256_setzero_pd(); }
  static type load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, type v) { _mm256_storeu_pd(p, v); }
  static type broadcast(double v) { return _mm256_set1_pd(v); }
  static type add(type a, type b) { return _mm256_add_pd(a, b); }
  static type mul(type a, type b) { return _mm256_mul_pd(a, b); }
};

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kDepthBlock = 256;
constexpr std::size_t kColBlock = 128;

// Rows [i, i+R) x columns [j, j+V*width), depth [p0, p1). `fresh` starts the
// accumulators at zero instead of loading C.
template <typename T, std::size_t R, std::size_t V>
inline void micro_tile(std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t i,
                       std::size_t j, std::size_t p0, std::size_t p1, bool fresh) {
  using V_t = Vec<T>;
  constexpr std::size_t W = V_t::width;
  typename V_t::type acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v)
      acc[r][v] = fresh ? V_t::zero() : V_t::load(c + (i + r) * n + j + v * W);
  for (std::size_t p = p0; p < p1; ++p) {
    const T* brow = b + p * n + j;
    typename V_t::type bv[V];
    for (std::size_t v = 0; v < V; ++v) bv[v] = V_t::load(brow + v * W);
    for (std::size_t r = 0; r < R; ++r) {
      const auto av = V_t::broadcast(a[(i + r) * k + p]);
      for (std::size_t v = 0; v < V; ++v) acc[r][v] = V_t::add(acc[r][v], V_t::mul(av, bv[v]));
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) V_t::store(c + (i + r) * n + j + v * W, acc[r][v]);
}

template <typename T, std::size_t R>
inline void row_strip(std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t i,
                      std::size_t j0, std::size_t j1, std::size_t p0, std::size_t p1,
                      bool fresh) {
  constexpr std::size_t W = Vec<T>::width;
  std::size_t j = j0;
  for (; j + 2 * W <= j1; j += 2 * W) micro_tile<T, R, 2>(n, k, a, b, c, i, j, p0, p1, fresh);
  for (; j + W <= j1; j += W) micro_tile<T, R, 1>(n, k, a, b, c, i, j, p0, p1, fresh);
  for (; j < j1; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      T acc = fresh ? T(0) : c[(i + r) * n + j];
      for (std::size_t p = p0; p < p1; ++p) acc = acc + a[(i + r) * k + p] * b[p * n + j];
      c[(i + r) * n + j] = acc;
    }
  }
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
    const std::size_t p1 = std::min(k, p0 + kDepthBlock);
    const bool fresh = !accumulate && p0 == 0;
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
      const std::size_t j1 = std::min(n, j0 + kColBlock);
      std::size_t i = 0;
      for (; i + kRowBlock <= m; i += kRowBlock)
        row_strip<T, kRowBlock>(n, k, a, b, c, i, j0, j1, p0, p1, fresh);
      for (; i < m; ++i) row_strip<T, 1>(n, k, a, b, c, i, j0, j1, p0, p1, fresh);
    }
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using V_t = Vec<T>;
  const auto av = V_t::broadcast(alpha);
  std::size_t i = 0;
  for (; i + V_t::width <= n; i += V_t::width)
    V_t::store(y + i, V_t::add(V_t::load(y + i), V_t::mul(av, V_t::load(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <typename T>
void mul(std::size_t n, const T* a, const T* b, T* out) {
  using V_t = Vec<T>;
  std::size_t i = 0;
  for (; i + V_t::width <= n; i += V_t::width)
    V_t::store(out + i, V_t::mul(V_t::load(a + i), V_t::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void mul_acc(std::size_t n, const T* a, const T* b, T* y) {
  using V_t = Vec<T>;
  std::size_t i = 0;
  for (; i + V_t::width <= n; i += V_t::width)
    V_t::store(y + i, V_t::add(V_t::load(y + i), V_t::mul(V_t::load(a + i), V_t::load(b + i))));
  for (; i < n; ++i) y[i] = y[i] + a[i] * b[i];
}

}  // namespace

bool compiled() { return true; }

template <typename T>
const KernelSet<T>& table() {
  static const KernelSet<T> set{&gemm<T>, &axpy<T>, &mul<T>, &mul_acc<T>};
  return set;
}

#else

bool compiled() { return false; }

template <typename T>
const KernelSet<T>& table() {
  throw std::logic_error("AVX2 kernels were not compiled into this build");
}

#endif

template const KernelSet<float>& table<float>();
template const KernelSet<double>& table<double>();

}  // namespace windformer::kernels::avx2

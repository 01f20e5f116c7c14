#include "windformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "windformer/kernels.hpp"
#include "windformer/logging.hpp"

namespace windformer::ops {
namespace {

template <typename T>
using NodeT = Node<T>;

template <typename T>
bool wants_grad(const std::shared_ptr<NodeT<T>>& p) {
  return p->requires_grad;
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  kernels::axpy<T>(dst.size(), T(1), src.data(), dst.data());
}

void transpose_into(std::size_t rows, std::size_t cols, const float* src, float* dst);
void transpose_into(std::size_t rows, std::size_t cols, const double* src, double* dst);

template <typename T>
void transpose_impl(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kTile = 16;
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile)
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t i1 = std::min(rows, i0 + kTile);
      const std::size_t j1 = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
}

void transpose_into(std::size_t rows, std::size_t cols, const float* src, float* dst) {
  transpose_impl(rows, cols, src, dst);
}
void transpose_into(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  transpose_impl(rows, cols, src, dst);
}

template <typename T>
std::vector<T> transposed(std::size_t rows, std::size_t cols, const T* src) {
  std::vector<T> out(rows * cols);
  transpose_into(rows, cols, src, out.data());
  return out;
}

// Strides of `shape` aligned to an output of rank `rank`; broadcast axes get 0.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - shape.size();
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[offset + i] = shape[i] == 1 ? 0 : stride;
    stride *= shape[i];
  }
  return strides;
}

// Calls fn(out_index, a_offset, b_offset) for every output element in order.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t rank = out.size();
  const std::size_t total = shape_numel(out);
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1];
  const std::size_t ib = sb[rank - 1];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(base + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      oa += sa[d];
      ob += sb[d];
      if (counter[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  std::vector<T> out(n);
  const auto& av = a.node().value;
  const auto& bv = b.node().value;
  const bool same = a.shape() == b.shape();
  if (same) {
    switch (kind) {
      case BinaryKind::add:
        for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
        break;
      case BinaryKind::sub:
        for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
        break;
      case BinaryKind::mul:
        kernels::mul<T>(n, av.data(), bv.data(), out.data());
        break;
    }
  } else {
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::add:
          out[o] = av[ia] + bv[ib];
          break;
        case BinaryKind::sub:
          out[o] = av[ia] - bv[ib];
          break;
        case BinaryKind::mul:
          out[o] = av[ia] * bv[ib];
          break;
      }
    });
  }
  return make_result<T>(out_shape, std::move(out), {&a, &b}, [kind, same, out_shape](NodeT<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto& g = self.grad;
    const std::size_t n = g.size();
    if (same) {
      if (wants_grad<T>(pa)) {
        auto& ga = pa->ensure_grad();
        if (kind == BinaryKind::mul)
          kernels::mul_acc<T>(n, g.data(), pb->value.data(), ga.data());
        else
          kernels::axpy<T>(n, T(1), g.data(), ga.data());
      }
      if (wants_grad<T>(pb)) {
        auto& gb = pb->ensure_grad();
        if (kind == BinaryKind::mul)
          kernels::mul_acc<T>(n, g.data(), pa->value.data(), gb.data());
        else
          kernels::axpy<T>(n, kind == BinaryKind::sub ? T(-1) : T(1), g.data(), gb.data());
      }
      return;
    }
    const auto sa = broadcast_strides(pa->shape, out_shape);
    const auto sb = broadcast_strides(pb->shape, out_shape);
    T* ga = wants_grad<T>(pa) ? pa->ensure_grad().data() : nullptr;
    T* gb = wants_grad<T>(pb) ? pb->ensure_grad().data() : nullptr;
    const T* va = pa->value.data();
    const T* vb = pb->value.data();
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] += g[o];
          break;
        case BinaryKind::sub:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] -= g[o];
          break;
        case BinaryKind::mul:
          if (ga) ga[ia] += g[o] * vb[ib];
          if (gb) gb[ib] += g[o] * va[ia];
          break;
      }
    });
  });
}

// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank)
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_to_string(shape));
}

}  // namespace

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  return static_cast<std::size_t>(a);
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("cannot broadcast " + shape_to_string(a) + " with " +
                           shape_to_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::mul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(x.shape(), std::move(out), {&x}, [factor](NodeT<T>& self) {
    kernels::axpy<T>(self.grad.size(), factor, self.grad.data(),
                     self.parents[0]->ensure_grad().data());
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [](NodeT<T>& self) { add_into(self.parents[0]->ensure_grad(), self.grad); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  const auto& v = x.node().value;
  std::vector<T> out(v.size());
  kernels::mul<T>(v.size(), v.data(), v.data(), out.data());
  return make_result<T>(x.shape(), std::move(out), {&x}, [](NodeT<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * p->value[i] * self.grad[i];
  });
}

namespace {
thread_local ReluPatternTrace* t_relu_trace = nullptr;
thread_local std::uint64_t* t_relu_hash = nullptr;
}  // namespace

ReluPatternTrace::ReluPatternTrace() : hash_(1469598103934665603ULL), previous_(t_relu_trace) {
  t_relu_trace = this;
  t_relu_hash = &hash_;
}

ReluPatternTrace::~ReluPatternTrace() {
  t_relu_trace = previous_;
  t_relu_hash = previous_ ? &previous_->hash_ : nullptr;
}

void ReluPatternTrace::record(const std::uint8_t* positive, std::size_t n) {
  if (!t_relu_hash) return;
  std::uint64_t h = *t_relu_hash;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= positive[i] ? 0x9eU : 0x3cU;
    h *= 1099511628211ULL;
  }
  *t_relu_hash = h;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto& v = x.node().value;
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
  if (t_relu_hash) {
    std::vector<std::uint8_t> pos(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) pos[i] = v[i] > T(0);
    ReluPatternTrace::record(pos.data(), pos.size());
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [](NodeT<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const auto& v = x.node().value;
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-v[i]));
  return make_result<T>(x.shape(), std::move(out), {&x}, [](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  const auto& v = x.node().value;
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, [](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return make_result<T>({1}, {acc}, {&x}, [](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T up = self.grad[0];
    for (auto& v : g) v += up;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, const std::vector<int>& axes) {
  const Shape& in = x.shape();
  Shape out_shape = in;
  for (int a : axes) out_shape[normalize_axis(a, in.size())] = 1;
  const std::size_t count = x.numel() / shape_numel(out_shape);
  const auto s_out = broadcast_strides(out_shape, in);
  const auto s_in = broadcast_strides(in, in);
  std::vector<T> out(shape_numel(out_shape), T(0));
  const auto& v = x.node().value;
  for_each_broadcast(in, s_in, s_out,
                     [&](std::size_t, std::size_t ii, std::size_t io) { out[io] += v[ii]; });
  const T inv = T(1) / static_cast<T>(count);
  for (auto& o : out) o *= inv;
  return make_result<T>(out_shape, std::move(out), {&x}, [in, s_in, s_out, inv](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for_each_broadcast(in, s_in, s_out, [&](std::size_t, std::size_t ii, std::size_t io) {
      g[ii] += self.grad[io] * inv;
    });
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() == 3) {
    auto pooled = reduce_mean(x, {1, 2});
    return reshape(pooled, {x.dim(0)});
  }
  if (x.rank() == 4) {
    auto pooled = reduce_mean(x, {2, 3});
    return reshape(pooled, {x.dim(0), x.dim(1)});
  }
  throw DimensionError("global_avg_pool expects [C,H,W] or [B,C,H,W], got " +
                       shape_to_string(x.shape()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank(a.shape(), 2, "matmul");
  check_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  return bmm(a, b, false, false);
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank())
    throw DimensionError("bmm needs operands of equal rank >= 2, got " +
                         shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i)
    if (a.shape()[i] != b.shape()[i])
      throw DimensionError("bmm batch dimensions differ: " + shape_to_string(a.shape()) +
                           " and " + shape_to_string(b.shape()));
  const std::size_t a_rows = a.shape()[r - 2], a_cols = a.shape()[r - 1];
  const std::size_t b_rows = b.shape()[r - 2], b_cols = b.shape()[r - 1];
  const std::size_t m = transpose_a ? a_cols : a_rows;
  const std::size_t k = transpose_a ? a_rows : a_cols;
  const std::size_t kb = transpose_b ? b_cols : b_rows;
  const std::size_t n = transpose_b ? b_rows : b_cols;
  if (k != kb)
    throw DimensionError("bmm inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= a.shape()[i];
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> out(batch * m * n);
  const T* av = a.data().data();
  const T* bv = b.data().data();
  std::vector<T> ta, tb;
  for (std::size_t g = 0; g < batch; ++g) {
    const T* ap = av + g * m * k;
    const T* bp = bv + g * k * n;
    if (transpose_a) {
      ta.resize(m * k);
      transpose_into(k, m, ap, ta.data());
      ap = ta.data();
    }
    if (transpose_b) {
      tb.resize(k * n);
      transpose_into(n, k, bp, tb.data());
      bp = tb.data();
    }
    kernels::gemm<T>(m, n, k, ap, bp, out.data() + g * m * n);
  }

  return make_result<T>(out_shape, std::move(out), {&a, &b},
                        [=](NodeT<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T* g = self.grad.data();
    std::vector<T> lhs, rhs, tmp;
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const T* gp = g + bi * m * n;
      // Effective operands A[m x k], B[k x n].
      const T* a_raw = pa->value.data() + bi * m * k;
      const T* b_raw = pb->value.data() + bi * k * n;
      if (wants_grad<T>(pa)) {
        // dA = G * B^T  ([m x n] * [n x k]); if A was transposed, store dA^T.
        rhs.resize(n * k);
        if (transpose_b)
          std::copy(b_raw, b_raw + n * k, rhs.begin());  // stored as [n x k]
        else
          transpose_into(k, n, b_raw, rhs.data());
        T* ga = pa->ensure_grad().data() + bi * m * k;
        if (!transpose_a) {
          kernels::gemm<T>(m, k, n, gp, rhs.data(), ga, true);
        } else {
          tmp.resize(m * k);
          kernels::gemm<T>(m, k, n, gp, rhs.data(), tmp.data(), false);
          // ga is [k x m]
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) ga[j * m + i] += tmp[i * k + j];
        }
      }
      if (wants_grad<T>(pb)) {
        // dB = A^T * G  ([k x m] * [m x n]); if B was transposed, store dB^T.
        lhs.resize(k * m);
        if (transpose_a)
          std::copy(a_raw, a_raw + k * m, lhs.begin());  // stored as [k x m]
        else
          transpose_into(m, k, a_raw, lhs.data());
        T* gb = pb->ensure_grad().data() + bi * k * n;
        if (!transpose_b) {
          kernels::gemm<T>(k, n, m, lhs.data(), gp, gb, true);
        } else {
          tmp.resize(k * n);
          kernels::gemm<T>(k, n, m, lhs.data(), gp, tmp.data(), false);
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j * k + i] += tmp[i * n + j];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_rank(weight.shape(), 2, "linear weight");
  const std::size_t d_out = weight.dim(0);
  const std::size_t d_in = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != d_in)
    throw DimensionError("linear: input " + shape_to_string(x.shape()) +
                         " does not match weight " + shape_to_string(weight.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d_out))
    throw DimensionError("linear: bias " + shape_to_string(bias.shape()) +
                         " does not match weight " + shape_to_string(weight.shape()));
  const std::size_t rows = x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;

  const auto wt = transposed(d_out, d_in, weight.data().data());  // [d_in x d_out]
  std::vector<T> out(rows * d_out);
  kernels::gemm<T>(rows, d_out, d_in, x.data().data(), wt.data(), out.data());
  if (bias.defined()) {
    const T* b = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d_out; ++j) out[r * d_out + j] += b[j];
  }

  auto backward = [rows, d_in, d_out](NodeT<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const T* g = self.grad.data();
    if (wants_grad<T>(px))
      kernels::gemm<T>(rows, d_in, d_out, g, pw->value.data(), px->ensure_grad().data(), true);
    if (wants_grad<T>(pw)) {
      const auto gt = transposed(rows, d_out, g);  // [d_out x rows]
      kernels::gemm<T>(d_out, d_in, rows, gt.data(), px->value.data(), pw->ensure_grad().data(),
                       true);
    }
    if (self.parents.size() > 2 && wants_grad<T>(self.parents[2])) {
      auto& gb = self.parents[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d_out; ++j) gb[j] += g[r * d_out + j];
    }
  };
  if (bias.defined())
    return make_result<T>(out_shape, std::move(out), {&x, &weight, &bias}, backward);
  return make_result<T>(out_shape, std::move(out), {&x, &weight}, backward);
}

namespace {

// col[(c*k + ky)*k + kx][y*W + x] = input[c][y+ky-pad][x+kx-pad] (0 outside).
template <typename T>
void im2col(const T* in, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, std::size_t h_out, std::size_t w_out, T* col) {
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * h_out * w_out;
        for (std::size_t y = 0; y < h_out; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t x = 0; x < w_out; ++x) {
            const auto sx =
                static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                                sx < static_cast<std::ptrdiff_t>(w);
            row[y * w_out + x] = inside ? in[(c * h + sy) * w + sx] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
                std::size_t pad, std::size_t h_out, std::size_t w_out, T* out) {
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * h_out * w_out;
        for (std::size_t y = 0; y < h_out; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t x = 0; x < w_out; ++x) {
            const auto sx =
                static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            out[(c * h + sy) * w + sx] += row[y * w_out + x];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t padding) {
  check_rank(x.shape(), 4, "conv2d input");
  check_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in)
    throw DimensionError("conv2d channel mismatch: input " + shape_to_string(x.shape()) +
                         ", weight " + shape_to_string(weight.shape()));
  if (weight.dim(3) != k) throw DimensionError("conv2d needs a square kernel");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out))
    throw DimensionError("conv2d bias " + shape_to_string(bias.shape()) + " does not match " +
                         std::to_string(c_out) + " output channels");
  if (h + 2 * padding < k || w + 2 * padding < k)
    throw DimensionError("conv2d kernel larger than padded input");
  const std::size_t h_out = h + 2 * padding - k + 1;
  const std::size_t w_out = w + 2 * padding - k + 1;
  const std::size_t taps = c_in * k * k;
  const std::size_t plane = h_out * w_out;

  std::vector<T> out(batch * c_out * plane);
  std::vector<T> col(taps * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.data().data() + b * c_in * h * w, c_in, h, w, k, padding, h_out, w_out, col.data());
    T* ob = out.data() + b * c_out * plane;
    kernels::gemm<T>(c_out, plane, taps, weight.data().data(), col.data(), ob);
    if (bias.defined())
      for (std::size_t co = 0; co < c_out; ++co) {
        const T bv = bias.data()[co];
        for (std::size_t p = 0; p < plane; ++p) ob[co * plane + p] += bv;
      }
  }

  auto backward = [=](NodeT<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const bool gx = wants_grad<T>(px);
    const bool gw = wants_grad<T>(pw);
    std::vector<T> col(taps * plane);
    std::vector<T> col_t;
    std::vector<T> wt;
    if (gx) wt = transposed(c_out, taps, pw->value.data());  // [taps x c_out]
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gb = self.grad.data() + b * c_out * plane;
      if (gw) {
        im2col(px->value.data() + b * c_in * h * w, c_in, h, w, k, padding, h_out, w_out,
               col.data());
        col_t.resize(plane * taps);
        transpose_into(taps, plane, col.data(), col_t.data());
        kernels::gemm<T>(c_out, taps, plane, gb, col_t.data(), pw->ensure_grad().data(), true);
      }
      if (gx) {
        kernels::gemm<T>(taps, plane, c_out, wt.data(), gb, col.data(), false);
        col2im_add(col.data(), c_in, h, w, k, padding, h_out, w_out,
                   px->ensure_grad().data() + b * c_in * h * w);
      }
    }
    if (self.parents.size() > 2 && wants_grad<T>(self.parents[2])) {
      auto& gbias = self.parents[2]->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < c_out; ++co) {
          const T* g = self.grad.data() + (b * c_out + co) * plane;
          T acc = T(0);
          for (std::size_t p = 0; p < plane; ++p) acc += g[p];
          gbias[co] += acc;
        }
    }
  };
  Shape out_shape{batch, c_out, h_out, w_out};
  if (bias.defined())
    return make_result<T>(out_shape, std::move(out), {&x, &weight, &bias}, backward);
  return make_result<T>(out_shape, std::move(out), {&x, &weight}, backward);
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, NormMode mode, int channel_axis, double momentum,
                    double eps) {
  const std::size_t axis = normalize_axis(channel_axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), axis);
  const std::size_t c = s.extent;
  if (gamma.numel() != c || beta.numel() != c)
    throw DimensionError("batchnorm: affine parameters must have " + std::to_string(c) +
                         " entries");
  if (state.running_mean.size() != c) throw DimensionError("batchnorm: running stats size mismatch");
  const std::size_t count = s.outer * s.inner;
  const auto& v = x.node().value;
  auto at = [&](std::size_t o, std::size_t ch, std::size_t i) {
    return (o * c + ch) * s.inner + i;
  };

  std::vector<T> mu(c), inv_std(c);
  if (mode == NormMode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) acc += v[at(o, ch, i)];
      const T m = acc / static_cast<T>(count);
      T var = T(0);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
          const T d = v[at(o, ch, i)] - m;
          var += d * d;
        }
      var /= static_cast<T>(count);
      mu[ch] = m;
      inv_std[ch] = T(1) / std::sqrt(var + static_cast<T>(eps));
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      const T mom = static_cast<T>(momentum);
      state.running_mean[ch] = (T(1) - mom) * state.running_mean[ch] + mom * m;
      state.running_var[ch] = (T(1) - mom) * state.running_var[ch] + mom * unbiased;
    }
    ++state.batches_seen;
  } else {
    if (state.batches_seen == 0) {
      log::warn_once("batchnorm-identity-stats",
                     "batchnorm evaluated before any training batch; using mean 0 / var 1");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + static_cast<T>(eps));
    }
  }

  std::vector<T> xhat(v.size()), out(v.size());
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t idx = at(o, ch, i);
        xhat[idx] = (v[idx] - mu[ch]) * inv_std[ch];
        out[idx] = gm[ch] * xhat[idx] + bt[ch];
      }

  const bool train = mode == NormMode::train;
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [s, c, count, train, xhat = std::move(xhat), inv_std](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& g = self.grad;
        auto at = [&](std::size_t o, std::size_t ch, std::size_t i) {
          return (o * c + ch) * s.inner + i;
        };
        std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < s.inner; ++i) {
              const std::size_t idx = at(o, ch, i);
              sum_g[ch] += g[idx];
              sum_gx[ch] += g[idx] * xhat[idx];
            }
        if (wants_grad<T>(pg)) {
          auto& gg = pg->ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (wants_grad<T>(pb)) {
          auto& gb = pb->ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (wants_grad<T>(px)) {
          auto& gx = px->ensure_grad();
          const T* gm = pg->value.data();
          const T inv_n = T(1) / static_cast<T>(count);
          for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T k = gm[ch] * inv_std[ch];
              const T mg = sum_g[ch] * inv_n;
              const T mgx = sum_gx[ch] * inv_n;
              for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t idx = at(o, ch, i);
                gx[idx] += train ? k * (g[idx] - mg - xhat[idx] * mgx) : k * g[idx];
              }
            }
        }
      });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layernorm: affine parameters must have " + std::to_string(d) +
                         " entries, input " + shape_to_string(x.shape()));
  const std::size_t rows = x.numel() / d;
  const auto& v = x.node().value;
  std::vector<T> xhat(v.size()), out(v.size()), inv_std(rows);
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v.data() + r * d;
    T acc = T(0);
    for (std::size_t j = 0; j < d; ++j) acc += row[j];
    const T m = acc / static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T dv = row[j] - m;
      var += dv * dv;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - m) * is;
      out[r * d + j] = gm[j] * xhat[r * d + j] + bt[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& g = self.grad;
        const T* gm = pg->value.data();
        T* gg = wants_grad<T>(pg) ? pg->ensure_grad().data() : nullptr;
        T* gb = wants_grad<T>(pb) ? pb->ensure_grad().data() : nullptr;
        T* gx = wants_grad<T>(px) ? px->ensure_grad().data() : nullptr;
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * d;
          const T* xr = xhat.data() + r * d;
          T mean_d = T(0), mean_dx = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gr[j] * xr[j];
            if (gb) gb[j] += gr[j];
            dxhat[j] = gr[j] * gm[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xr[j];
          }
          if (!gx) continue;
          mean_d /= static_cast<T>(d);
          mean_dx /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  const auto& v = x.node().value;
  std::vector<T> out(v.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = v[base];
      for (std::size_t j = 1; j < s.extent; ++j) mx = std::max(mx, v[base + j * s.inner]);
      T total = T(0);
      for (std::size_t j = 0; j < s.extent; ++j) {
        const T e = std::exp(v[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] *= inv;
    }
  return make_result<T>(x.shape(), std::move(out), {&x}, [s](NodeT<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T dot = T(0);
        for (std::size_t j = 0; j < s.extent; ++j)
          dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("cannot reshape " + shape_to_string(x.shape()) + " to " +
                         shape_to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&x},
                        [](NodeT<T>& self) { add_into(self.parents[0]->ensure_grad(), self.grad); });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.size())
    throw DimensionError("permute order has " + std::to_string(order.size()) +
                         " axes for shape " + shape_to_string(in));
  std::vector<bool> used(in.size(), false);
  for (std::size_t a : order) {
    if (a >= in.size() || used[a]) throw DimensionError("permute order is not a permutation");
    used[a] = true;
  }
  Shape out_shape(in.size());
  std::vector<std::size_t> in_strides(in.size());
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_strides[i] = stride;
    stride *= in[i];
  }
  std::vector<std::size_t> src_strides(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out_shape[i] = in[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  std::vector<std::size_t> zero(in.size(), 0);
  std::vector<std::int64_t> index(x.numel());
  for_each_broadcast(out_shape, src_strides, zero, [&](std::size_t o, std::size_t src, std::size_t) {
    index[o] = static_cast<std::int64_t>(src);
  });
  return gather(x, std::move(out_shape), std::move(index));
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  if (length == 0 || start + length > s.extent)
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis " +
                         std::to_string(ax) + " of " + shape_to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<T> out(s.outer * length * s.inner);
  const auto& v = x.node().value;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * s.extent + start) * s.inner),
                length * s.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
  return make_result<T>(out_shape, std::move(out), {&x}, [s, start, length](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const std::size_t chunk = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      kernels::axpy<T>(chunk, T(1), self.grad.data() + o * chunk,
                       g.data() + (o * s.extent + start) * s.inner);
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size())
      throw DimensionError("concat rank mismatch: " + shape_to_string(parts[0].shape()) + " vs " +
                           shape_to_string(p.shape()));
    for (std::size_t i = 0; i < probe.size(); ++i)
      if (i != ax && probe[i] != parts[0].shape()[i])
        throw DimensionError("concat shape mismatch: " + shape_to_string(parts[0].shape()) +
                             " vs " + shape_to_string(p.shape()));
    extents.push_back(probe[ax]);
    out_shape[ax] += probe[ax];
  }
  const AxisSplit s = split_axis(out_shape, ax);
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = parts[pi].node().value;
    const std::size_t chunk = extents[pi] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.extent + offset) * s.inner));
    offset += extents[pi];
  }
  return make_result<T>(out_shape, std::move(out), parts, [s, extents](NodeT<T>& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = self.parents[pi];
      const std::size_t chunk = extents[pi] * s.inner;
      if (wants_grad<T>(p)) {
        auto& g = p->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o)
          kernels::axpy<T>(chunk, T(1), self.grad.data() + (o * s.extent + offset) * s.inner,
                           g.data() + o * chunk);
      }
      offset += extents[pi];
    }
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::vector<std::int64_t> index) {
  if (shape_numel(out_shape) != index.size())
    throw DimensionError("gather index count " + std::to_string(index.size()) +
                         " does not match " + shape_to_string(out_shape));
  const auto& v = x.node().value;
  const auto limit = static_cast<std::int64_t>(v.size());
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int64_t src = index[i];
    if (src >= limit) throw DimensionError("gather index out of range");
    out[i] = src < 0 ? T(0) : v[static_cast<std::size_t>(src)];
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&x},
                        [index = std::move(index)](NodeT<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < index.size(); ++i)
                            if (index[i] >= 0) g[static_cast<std::size_t>(index[i])] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> roll(const Tensor<T>& x, int axis, std::int64_t shift) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  const auto n = static_cast<std::int64_t>(s.extent);
  std::vector<std::int64_t> index(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t src = ((j - shift) % n + n) % n;
      for (std::size_t i = 0; i < s.inner; ++i)
        index[(o * s.extent + static_cast<std::size_t>(j)) * s.inner + i] =
            static_cast<std::int64_t>((o * s.extent + static_cast<std::size_t>(src)) * s.inner + i);
    }
  return gather(x, x.shape(), std::move(index));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  if (pred.shape() != target.shape())
    throw DimensionError("mse_loss: prediction " + shape_to_string(pred.shape()) +
                         " vs target " + shape_to_string(target.shape()));
  if (mask.defined() && mask.shape() != pred.shape())
    throw DimensionError("mse_loss: mask " + shape_to_string(mask.shape()) + " vs prediction " +
                         shape_to_string(pred.shape()));
  const auto& p = pred.node().value;
  const auto& t = target.node().value;
  std::vector<T> weight(p.size(), T(1));
  if (mask.defined())
    for (std::size_t i = 0; i < p.size(); ++i) weight[i] = mask.data()[i] != T(0) ? T(1) : T(0);
  T count = T(0);
  for (T w : weight) count += w;
  if (count == T(0)) throw ContractError("mse_loss: mask selects no entries");
  T acc = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    acc += weight[i] * d * d;
  }
  const T inv = T(1) / count;
  std::vector<T> diff(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) diff[i] = weight[i] * (p[i] - t[i]);
  return make_result<T>({1}, {acc * inv}, {&pred}, [inv, diff = std::move(diff)](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T up = self.grad[0] * T(2) * inv;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * diff[i];
  });
}

#define WINDFORMER_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> square(const Tensor<T>&);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> tanh(const Tensor<T>&);                                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> reduce_mean(const Tensor<T>&, const std::vector<int>&);                 \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                            std::size_t);                                                    \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                               BatchNormState<T>&, NormMode, int, double, double);           \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> softmax(const Tensor<T>&, int);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                 \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                             \
  template Tensor<T> gather(const Tensor<T>&, Shape, std::vector<std::int64_t>);             \
  template Tensor<T> roll(const Tensor<T>&, int, std::int64_t);                              \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

WINDFORMER_INSTANTIATE_OPS(float)
WINDFORMER_INSTANTIATE_OPS(double)

#undef WINDFORMER_INSTANTIATE_OPS

}  // namespace windformer::ops

#pragma once

// Differentiable tensor operations. All ops are templated on the scalar type
// and instantiated for float (training) and double (gradient checking).

#include <cstdint>
#include <optional>
#include <vector>

#include "windformer/tensor.hpp"

namespace windformer::ops {

// ---------------------------------------------------------------------------
// Elementwise and broadcasting arithmetic. Broadcasting follows the usual
// right-aligned rule: a dimension of size 1 stretches to match the other side.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T>
Tensor<T> square(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

/// Broadcast result shape, or DimensionError naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b);

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Mean over `axes`, keeping reduced dimensions as size 1.
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, const std::vector<int>& axes);
/// Per-channel spatial mean: [C,H,W] -> [C] or [B,C,H,W] -> [B,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Products.
// ---------------------------------------------------------------------------

/// [m x k] * [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product over matching leading dimensions, with optional
/// transposition of the trailing two axes of either operand.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
              bool transpose_b = false);

/// x[..., d_in] * weight[d_out, d_in]^T + bias[d_out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Cross-correlation of x[B, C_in, H, W] with weight[C_out, C_in, k, k].
/// Each output accumulates taps in (c_in, ky, kx) row-major order starting
/// from zero, then adds the bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t padding);

// ---------------------------------------------------------------------------
// Normalization and softmax.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  std::int64_t batches_seen = 0;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

enum class NormMode { train, eval };

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over every axis except `channel_axis`.
/// Train mode uses batch statistics and updates `state`; eval mode reads it.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, NormMode mode, int channel_axis,
                    double momentum = kBatchNormMomentum, double eps = kNormEps);

/// Normalization over the trailing dimension.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps = kNormEps);

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

// ---------------------------------------------------------------------------
// Layout.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);

/// out[i] = index[i] < 0 ? 0 : x[index[i]] over flat offsets. The backward
/// pass scatter-adds, so repeated indices are allowed.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::vector<std::int64_t> index);

/// Cyclic roll: out[..., i, ...] = x[..., (i - shift) mod n, ...] on `axis`.
template <typename T>
Tensor<T> roll(const Tensor<T>& x, int axis, std::int64_t shift);

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

/// Mean squared error over entries where mask != 0 (all entries when the mask
/// is undefined). Gradients flow into `pred` only.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);

// ---------------------------------------------------------------------------
// ReLU sign-pattern tracing, used by the gradient checker to discard finite
// differences that straddle a kink.
// ---------------------------------------------------------------------------

class ReluPatternTrace {
 public:
  ReluPatternTrace();
  ~ReluPatternTrace();
  ReluPatternTrace(const ReluPatternTrace&) = delete;
  ReluPatternTrace& operator=(const ReluPatternTrace&) = delete;

  std::uint64_t digest() const { return hash_; }
  static void record(const std::uint8_t* positive, std::size_t n);

 private:
  std::uint64_t hash_;
  ReluPatternTrace* previous_;
};

std::size_t normalize_axis(int axis, std::size_t rank);

}  // namespace windformer::ops

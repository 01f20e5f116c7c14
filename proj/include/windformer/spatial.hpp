#pragma once

// Spatial feature extraction on channels-last maps [B, H, W, C]: window
// attention blocks (plain and shifted), a convolutional stand-in block for
// ablations, 2x2 Turbine Merge, and the Channel Fusion gate.

#include <memory>
#include <string>
#include <vector>

#include "windformer/layers.hpp"

namespace windformer {

inline constexpr double kMaskValue = -1e9;

enum class SpatialVariant { empty, cnn, window, shift_window };
enum class FusionVariant { empty, global_only, detail_only, full };

std::string to_string(SpatialVariant v);
std::string to_string(FusionVariant v);
SpatialVariant parse_spatial_variant(const std::string& text);
FusionVariant parse_fusion_variant(const std::string& text);

template <typename T>
struct FeatureMap {
  Tensor<T> x;                         // [B, H, W, C]
  std::vector<std::uint8_t> pad_mask;  // [H * W], 1 on cells added by padding; empty = none

  std::size_t height() const { return x.dim(1); }
  std::size_t width() const { return x.dim(2); }
  std::size_t channels() const { return x.dim(3); }
  bool is_pad(std::size_t cell) const { return !pad_mask.empty() && pad_mask[cell]; }
};

/// Smallest multiple of window * 2^(stages - 1) that is >= n.
std::size_t padded_extent(std::size_t n, std::size_t window, std::size_t stages);

/// Zero-pads bottom and right up to padded_extent and marks the new cells.
template <typename T>
FeatureMap<T> pad_to_window_multiple(const FeatureMap<T>& map, std::size_t window, std::size_t stages);

/// [B, H, W, C] -> [B, nW, window^2, C], windows in row-major order.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window);

/// Inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t window, std::size_t height, std::size_t width);

/// Rolls rows and columns by -offset (offset > 0 moves content up and left).
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, std::int64_t offset);

/// Region id of every cell of the shifted map: cells whose pre-shift
/// positions were contiguous share an id.
std::vector<int> shift_regions(std::size_t height, std::size_t width, std::size_t window, std::size_t shift);

/// [nW, N, N] additive mask: kMaskValue between tokens of different regions.
std::vector<double> build_shift_mask(std::size_t height, std::size_t width, std::size_t window,
                                     std::size_t shift);

/// Shift mask combined with padding: keys that are padding cells are masked
/// as well. `pad_mask` is in unshifted coordinates; empty means none.
std::vector<double> build_attention_mask(std::size_t height, std::size_t width, std::size_t window,
                                         std::size_t shift, const std::vector<std::uint8_t>& pad_mask);

/// Receives post-softmax attention weights [B, nW, heads, N, N] when attached.
template <typename T>
struct AttentionProbe {
  Shape shape;
  std::vector<T> weights;
};

template <typename T>
class WindowAttention : public Module<T> {
 public:
  WindowAttention(std::size_t dim, std::size_t heads, std::size_t window, bool relative_bias);

  /// windows [B, nW, N, C]; mask [nW, N, N] or empty.
  Tensor<T> forward(const Tensor<T>& windows, const std::vector<double>& mask) const;

  std::size_t dim, heads, window;
  bool relative_bias;
  Linear<T> qkv;   // C -> 3C, output order q | k | v
  Linear<T> proj;  // C -> C
  Tensor<T> bias_table;  // [(2w - 1)^2, heads]
  std::vector<std::int64_t> relative_index;  // [heads * N * N] into bias_table
  mutable AttentionProbe<T>* probe = nullptr;
};

template <typename T>
class SpatialBlock : public Module<T> {
 public:
  virtual FeatureMap<T> forward(const FeatureMap<T>& map) const = 0;
};

/// x + Attn(LN(x)), then x + MLP(LN(x)) with a ReLU MLP. The attention is
/// over shifted windows when `shift` > 0 and the map is larger than a window.
template <typename T>
class ShiftWindowBlock : public SpatialBlock<T> {
 public:
  ShiftWindowBlock(std::size_t dim, std::size_t heads, std::size_t window, std::size_t shift,
                   double mlp_ratio, bool relative_bias);
  FeatureMap<T> forward(const FeatureMap<T>& map) const override;
  /// Shift used on a map of this size.
  std::size_t effective_shift(std::size_t height, std::size_t width) const;

  std::size_t window, shift;
  LayerNorm<T> norm1;
  WindowAttention<T> attn;
  LayerNorm<T> norm2;
  Linear<T> fc1, fc2;
};

/// Attention-free stand-in: x + Conv3x3(LN(x)), then x + MLP(LN(x)) with a
/// 1.5x hidden width, which totals about 12 C^2 weights like the attention block.
template <typename T>
class ConvBlock : public SpatialBlock<T> {
 public:
  explicit ConvBlock(std::size_t dim);
  FeatureMap<T> forward(const FeatureMap<T>& map) const override;

  LayerNorm<T> norm1;
  Conv2d<T> conv;
  LayerNorm<T> norm2;
  Linear<T> fc1, fc2;
};

/// Concatenates each 2x2 neighbourhood (4C), LayerNorm, bias-free 4C -> 2C.
/// A merged cell is padding only if all four sources were.
template <typename T>
class TurbineMerge : public Module<T> {
 public:
  explicit TurbineMerge(std::size_t dim);
  FeatureMap<T> forward(const FeatureMap<T>& map) const;

  std::size_t dim;
  LayerNorm<T> norm;
  Linear<T> reduction;
};

/// X' = X * sigmoid(D(X) + G(X)), D the pointwise detail branch and G the
/// pooled global branch, each C -> C/r -> C with batch norm. The ablation
/// variants drop one branch from the gate.
template <typename T>
class ChannelFusion : public Module<T> {
 public:
  ChannelFusion(std::size_t dim, std::size_t reduction, FusionVariant variant);
  FeatureMap<T> forward(const FeatureMap<T>& map);
  /// sigmoid(...) for x [B, H, W, C].
  Tensor<T> gate(const Tensor<T>& x);

  FusionVariant variant;
  std::size_t hidden;
  std::unique_ptr<Linear<T>> detail1, detail2, global1, global2;
  std::unique_ptr<BatchNorm<T>> detail_bn1, detail_bn2, global_bn1, global_bn2;
};

template <typename T>
class Stage : public Module<T> {
 public:
  Stage(SpatialVariant variant, std::size_t dim, std::size_t depth, std::size_t heads, std::size_t window,
        std::size_t shift, double mlp_ratio, bool relative_bias, bool merge, FusionVariant fusion,
        std::size_t fusion_reduction);
  FeatureMap<T> forward(const FeatureMap<T>& map);
  std::size_t output_dim() const { return merge ? 2 * dim : dim; }

  std::size_t dim;
  std::vector<std::unique_ptr<SpatialBlock<T>>> blocks;
  std::unique_ptr<TurbineMerge<T>> merge;
  std::unique_ptr<ChannelFusion<T>> fusion;
};

/// Flattens the final map and maps it to one value per turbine.
template <typename T>
class PredictionHead : public Module<T> {
 public:
  PredictionHead(std::size_t in_features, std::size_t turbines);
  Tensor<T> forward(const FeatureMap<T>& map) const;

  Linear<T> proj;
};

}  // namespace windformer

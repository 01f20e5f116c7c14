#include "windformer/spatial.hpp"

#include <cmath>
#include <stdexcept>

#include "windformer/logging.hpp"

namespace windformer {

std::string to_string(SpatialVariant v) {
  switch (v) {
    case SpatialVariant::empty:
      return "empty";
    case SpatialVariant::cnn:
      return "cnn";
    case SpatialVariant::window:
      return "window";
    case SpatialVariant::shift_window:
      return "shift-window";
  }
  return "?";
}

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::empty:
      return "empty";
    case FusionVariant::global_only:
      return "global-only";
    case FusionVariant::detail_only:
      return "detail-only";
    case FusionVariant::full:
      return "full";
  }
  return "?";
}

SpatialVariant parse_spatial_variant(const std::string& text) {
  for (auto v : {SpatialVariant::empty, SpatialVariant::cnn, SpatialVariant::window, SpatialVariant::shift_window})
    if (to_string(v) == text) return v;
  throw std::invalid_argument("unknown spatial variant '" + text + "'");
}

FusionVariant parse_fusion_variant(const std::string& text) {
  for (auto v : {FusionVariant::empty, FusionVariant::global_only, FusionVariant::detail_only, FusionVariant::full})
    if (to_string(v) == text) return v;
  throw std::invalid_argument("unknown fusion variant '" + text + "'");
}

// ---------------------------------------------------------------------------
// Layout helpers.
// ---------------------------------------------------------------------------

std::size_t padded_extent(std::size_t n, std::size_t window, std::size_t stages) {
  const std::size_t unit = window << (stages - 1);
  return (n + unit - 1) / unit * unit;
}

template <typename T>
FeatureMap<T> pad_to_window_multiple(const FeatureMap<T>& map, std::size_t window, std::size_t stages) {
  const std::size_t B = map.x.dim(0), H = map.height(), W = map.width(), C = map.channels();
  const std::size_t Hp = padded_extent(H, window, stages), Wp = padded_extent(W, window, stages);
  if (Hp == H && Wp == W) return map;
  std::vector<std::int64_t> index(B * Hp * Wp * C, -1);
  std::vector<std::uint8_t> pad(Hp * Wp, 1);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) pad[r * Wp + c] = map.is_pad(r * W + c) ? 1 : 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t k = 0; k < C; ++k)
          index[((b * Hp + r) * Wp + c) * C + k] = static_cast<std::int64_t>(((b * H + r) * W + c) * C + k);
  return {ops::gather(map.x, {B, Hp, Wp, C}, std::move(index)), std::move(pad)};
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t w) {
  if (x.rank() != 4) throw DimensionError("window_partition expects [B, H, W, C], got " + shape_to_string(x.shape()));
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (w == 0 || H % w != 0 || W % w != 0)
    throw DimensionError("map " + shape_to_string(x.shape()) + " is not divisible into windows of " +
                         std::to_string(w));
  const std::size_t nwy = H / w, nwx = W / w, N = w * w;
  std::vector<std::int64_t> index(x.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t wy = 0; wy < nwy; ++wy)
      for (std::size_t wx = 0; wx < nwx; ++wx)
        for (std::size_t ty = 0; ty < w; ++ty)
          for (std::size_t tx = 0; tx < w; ++tx) {
            const std::size_t src = ((b * H + wy * w + ty) * W + wx * w + tx) * C;
            for (std::size_t c = 0; c < C; ++c) index[o++] = static_cast<std::int64_t>(src + c);
          }
  return ops::gather(x, {B, nwy * nwx, N, C}, std::move(index));
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t w, std::size_t H, std::size_t W) {
  if (windows.rank() != 4 || windows.dim(2) != w * w || windows.dim(1) != (H / w) * (W / w) || H % w || W % w)
    throw DimensionError("window_reverse: " + shape_to_string(windows.shape()) + " does not tile a " +
                         std::to_string(H) + "x" + std::to_string(W) + " map with window " + std::to_string(w));
  const std::size_t B = windows.dim(0), C = windows.dim(3), nwx = W / w, N = w * w;
  std::vector<std::int64_t> index(windows.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        const std::size_t win = (r / w) * nwx + c / w, tok = (r % w) * w + c % w;
        const std::size_t src = ((b * (windows.dim(1)) + win) * N + tok) * C;
        for (std::size_t k = 0; k < C; ++k) index[o++] = static_cast<std::int64_t>(src + k);
      }
  return ops::gather(windows, {B, H, W, C}, std::move(index));
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, std::int64_t offset) {
  return ops::roll(ops::roll(x, 1, -offset), 2, -offset);
}

std::vector<int> shift_regions(std::size_t H, std::size_t W, std::size_t w, std::size_t s) {
  auto band = [&](std::size_t i, std::size_t n) {
    if (s == 0) return 0;
    if (i < n - w) return 0;
    if (i < n - s) return 1;
    return 2;
  };
  std::vector<int> region(H * W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) region[r * W + c] = band(r, H) * 3 + band(c, W);
  return region;
}

std::vector<double> build_attention_mask(std::size_t H, std::size_t W, std::size_t w, std::size_t s,
                                         const std::vector<std::uint8_t>& pad_mask) {
  if (w == 0 || H % w || W % w || s >= w)
    throw DimensionError("invalid mask geometry: " + std::to_string(H) + "x" + std::to_string(W) + ", window " +
                         std::to_string(w) + ", shift " + std::to_string(s));
  const auto region = shift_regions(H, W, w, s);
  // Padding flags moved to shifted coordinates.
  std::vector<std::uint8_t> pad(H * W, 0);
  if (!pad_mask.empty())
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) pad[r * W + c] = pad_mask[((r + s) % H) * W + (c + s) % W];

  const std::size_t nwx = W / w, nW = (H / w) * nwx, N = w * w;
  std::vector<double> mask(nW * N * N, 0.0);
  for (std::size_t win = 0; win < nW; ++win) {
    const std::size_t r0 = (win / nwx) * w, c0 = (win % nwx) * w;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t ci = (r0 + i / w) * W + c0 + i % w;
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t cj = (r0 + j / w) * W + c0 + j % w;
        if (region[ci] != region[cj] || pad[cj]) mask[(win * N + i) * N + j] = kMaskValue;
      }
    }
  }
  return mask;
}

std::vector<double> build_shift_mask(std::size_t H, std::size_t W, std::size_t w, std::size_t s) {
  return build_attention_mask(H, W, w, s, {});
}

// ---------------------------------------------------------------------------
// Attention.
// ---------------------------------------------------------------------------

template <typename T>
WindowAttention<T>::WindowAttention(std::size_t d, std::size_t h, std::size_t w, bool rel)
    : dim(d), heads(h), window(w), relative_bias(rel), qkv(d, 3 * d), proj(d, d) {
  if (h == 0 || d % h != 0)
    throw std::invalid_argument("embedding width " + std::to_string(d) + " is not divisible by " +
                                std::to_string(h) + " heads");
  this->register_module("qkv", qkv);
  this->register_module("proj", proj);
  if (relative_bias) {
    const std::size_t span = 2 * w - 1, N = w * w;
    bias_table = this->register_parameter("relative_position_bias", {span * span, h}, Init::normal());
    relative_index.resize(h * N * N);
    for (std::size_t head = 0; head < h; ++head)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const std::size_t dy = i / w + w - 1 - j / w, dx = i % w + w - 1 - j % w;
          relative_index[(head * N + i) * N + j] = static_cast<std::int64_t>((dy * span + dx) * h + head);
        }
  }
}

template <typename T>
Tensor<T> WindowAttention<T>::forward(const Tensor<T>& windows, const std::vector<double>& mask) const {
  if (windows.rank() != 4 || windows.dim(3) != dim)
    throw DimensionError("attention expects [B, nW, N, " + std::to_string(dim) + "], got " +
                         shape_to_string(windows.shape()));
  const std::size_t B = windows.dim(0), nW = windows.dim(1), N = windows.dim(2), dh = dim / heads;
  if (N != window * window)
    throw DimensionError("attention windows hold " + std::to_string(N) + " tokens, expected " +
                         std::to_string(window * window));

  auto packed = ops::permute(ops::reshape(qkv.forward(windows), {B, nW, N, 3, heads, dh}), {3, 0, 1, 4, 2, 5});
  auto part = [&](std::size_t i) { return ops::reshape(ops::slice(packed, 0, i, 1), {B, nW, heads, N, dh}); };
  const auto q = ops::scale(part(0), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  const auto k = part(1);
  const auto v = part(2);

  auto scores = ops::bmm(q, k, false, true);  // [B, nW, heads, N, N]
  if (relative_bias) scores = ops::add(scores, ops::gather(bias_table, {heads, N, N}, relative_index));
  if (!mask.empty()) {
    if (mask.size() != nW * N * N)
      throw DimensionError("attention mask holds " + std::to_string(mask.size()) + " entries, expected " +
                           std::to_string(nW * N * N));
    scores = ops::add(scores, Tensor<T>::from_vector({nW, 1, N, N}, std::vector<T>(mask.begin(), mask.end())));
  }
  const auto weights = ops::softmax(scores, -1);
  if (probe) {
    probe->shape = weights.shape();
    probe->weights.assign(weights.data().begin(), weights.data().end());
  }
  const auto out = ops::permute(ops::bmm(weights, v), {0, 1, 3, 2, 4});
  return proj.forward(ops::reshape(out, {B, nW, N, dim}));
}

// ---------------------------------------------------------------------------
// Blocks.
// ---------------------------------------------------------------------------

template <typename T>
ShiftWindowBlock<T>::ShiftWindowBlock(std::size_t d, std::size_t h, std::size_t w, std::size_t s, double mlp_ratio,
                                      bool rel)
    : window(w),
      shift(s),
      norm1(d),
      attn(d, h, w, rel),
      norm2(d),
      fc1(d, static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(d)))),
      fc2(fc1.out_features, d) {
  this->register_module("norm1", norm1);
  this->register_module("attn", attn);
  this->register_module("norm2", norm2);
  this->register_module("fc1", fc1);
  this->register_module("fc2", fc2);
}

template <typename T>
std::size_t ShiftWindowBlock<T>::effective_shift(std::size_t height, std::size_t width) const {
  // A single window already covers the map; shifting would only wrap it.
  return (height <= window || width <= window) ? 0 : shift;
}

template <typename T>
FeatureMap<T> ShiftWindowBlock<T>::forward(const FeatureMap<T>& map) const {
  const std::size_t H = map.height(), W = map.width();
  const std::size_t s = effective_shift(H, W);
  auto y = norm1.forward(map.x);
  if (s) y = cyclic_shift(y, static_cast<std::int64_t>(s));
  const bool masked = s > 0 || !map.pad_mask.empty();
  const auto mask = masked ? build_attention_mask(H, W, window, s, map.pad_mask) : std::vector<double>{};
  y = window_reverse(attn.forward(window_partition(y, window), mask), window, H, W);
  if (s) y = cyclic_shift(y, -static_cast<std::int64_t>(s));
  auto x = ops::add(map.x, y);
  x = ops::add(x, fc2.forward(ops::relu(fc1.forward(norm2.forward(x)))));
  return {x, map.pad_mask};
}

template <typename T>
ConvBlock<T>::ConvBlock(std::size_t d)
    : norm1(d), conv(d, d, 3), norm2(d), fc1(d, (3 * d + 1) / 2), fc2(fc1.out_features, d) {
  this->register_module("norm1", norm1);
  this->register_module("conv", conv);
  this->register_module("norm2", norm2);
  this->register_module("fc1", fc1);
  this->register_module("fc2", fc2);
}

template <typename T>
FeatureMap<T> ConvBlock<T>::forward(const FeatureMap<T>& map) const {
  auto y = ops::permute(norm1.forward(map.x), {0, 3, 1, 2});
  y = ops::permute(conv.forward(y), {0, 2, 3, 1});
  auto x = ops::add(map.x, y);
  x = ops::add(x, fc2.forward(ops::relu(fc1.forward(norm2.forward(x)))));
  return {x, map.pad_mask};
}

template <typename T>
TurbineMerge<T>::TurbineMerge(std::size_t d) : dim(d), norm(4 * d), reduction(4 * d, 2 * d, false) {
  this->register_module("norm", norm);
  this->register_module("reduction", reduction);
}

template <typename T>
FeatureMap<T> TurbineMerge<T>::forward(const FeatureMap<T>& map) const {
  const std::size_t B = map.x.dim(0), H = map.height(), W = map.width(), C = map.channels();
  if (H % 2 || W % 2) throw DimensionError("turbine merge needs an even map, got " + shape_to_string(map.x.shape()));
  if (C != dim) throw DimensionError("turbine merge expects " + std::to_string(dim) + " channels");
  const std::size_t Ho = H / 2, Wo = W / 2;
  static constexpr std::size_t kOffsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  std::vector<std::int64_t> index(B * Ho * Wo * 4 * C);
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < Ho; ++r)
      for (std::size_t c = 0; c < Wo; ++c)
        for (const auto& off : kOffsets) {
          const std::size_t src = ((b * H + 2 * r + off[0]) * W + 2 * c + off[1]) * C;
          for (std::size_t k = 0; k < C; ++k) index[o++] = static_cast<std::int64_t>(src + k);
        }
  std::vector<std::uint8_t> pad;
  if (!map.pad_mask.empty()) {
    pad.resize(Ho * Wo);
    for (std::size_t r = 0; r < Ho; ++r)
      for (std::size_t c = 0; c < Wo; ++c) {
        bool all = true;
        for (const auto& off : kOffsets) all = all && map.is_pad((2 * r + off[0]) * W + 2 * c + off[1]);
        pad[r * Wo + c] = all ? 1 : 0;
      }
  }
  const auto gathered = ops::gather(map.x, {B, Ho, Wo, 4 * C}, std::move(index));
  return {reduction.forward(norm.forward(gathered)), std::move(pad)};
}

// ---------------------------------------------------------------------------
// Channel fusion.
// ---------------------------------------------------------------------------

template <typename T>
ChannelFusion<T>::ChannelFusion(std::size_t d, std::size_t r, FusionVariant v) : variant(v) {
  if (v == FusionVariant::empty) throw std::invalid_argument("an empty channel fusion has no module");
  if (r == 0) throw std::invalid_argument("fusion reduction must be positive");
  hidden = d / r;
  if (hidden == 0) {
    log::warn_once("fusion-reduction-clamp", "channel fusion width " + std::to_string(d) +
                                                 " is below the reduction ratio " + std::to_string(r) +
                                                 "; using one hidden channel");
    hidden = 1;
  }
  if (v == FusionVariant::full || v == FusionVariant::detail_only) {
    detail1 = std::make_unique<Linear<T>>(d, hidden);
    detail_bn1 = std::make_unique<BatchNorm<T>>(hidden);
    detail2 = std::make_unique<Linear<T>>(hidden, d);
    detail_bn2 = std::make_unique<BatchNorm<T>>(d);
    this->register_module("detail1", *detail1);
    this->register_module("detail_bn1", *detail_bn1);
    this->register_module("detail2", *detail2);
    this->register_module("detail_bn2", *detail_bn2);
  }
  if (v == FusionVariant::full || v == FusionVariant::global_only) {
    global1 = std::make_unique<Linear<T>>(d, hidden);
    global_bn1 = std::make_unique<BatchNorm<T>>(hidden);
    global2 = std::make_unique<Linear<T>>(hidden, d);
    global_bn2 = std::make_unique<BatchNorm<T>>(d);
    this->register_module("global1", *global1);
    this->register_module("global_bn1", *global_bn1);
    this->register_module("global2", *global2);
    this->register_module("global_bn2", *global_bn2);
  }
}

template <typename T>
Tensor<T> ChannelFusion<T>::gate(const Tensor<T>& x) {
  Tensor<T> logits;
  if (detail1) logits = detail_bn2->forward(detail2->forward(ops::relu(detail_bn1->forward(detail1->forward(x)))));
  if (global1) {
    const std::size_t B = x.dim(0), C = x.dim(3);
    const auto pooled = ops::reshape(ops::reduce_mean(x, {1, 2}), {B, C});
    auto g = global_bn2->forward(global2->forward(ops::relu(global_bn1->forward(global1->forward(pooled)))));
    g = ops::reshape(g, {B, 1, 1, C});
    logits = logits.defined() ? ops::add(logits, g) : g;
  }
  return ops::sigmoid(logits);
}

template <typename T>
FeatureMap<T> ChannelFusion<T>::forward(const FeatureMap<T>& map) {
  return {ops::mul(map.x, gate(map.x)), map.pad_mask};
}

// ---------------------------------------------------------------------------
// Stage and head.
// ---------------------------------------------------------------------------

template <typename T>
Stage<T>::Stage(SpatialVariant variant, std::size_t d, std::size_t depth, std::size_t heads, std::size_t window,
                std::size_t shift, double mlp_ratio, bool relative_bias, bool with_merge, FusionVariant fusion_variant,
                std::size_t fusion_reduction)
    : dim(d) {
  if (variant == SpatialVariant::empty) throw std::invalid_argument("an empty spatial module has no stages");
  for (std::size_t i = 0; i < depth; ++i) {
    if (variant == SpatialVariant::cnn) {
      blocks.push_back(std::make_unique<ConvBlock<T>>(d));
    } else {
      const bool shifted = variant == SpatialVariant::shift_window && i % 2 == 1;
      blocks.push_back(
          std::make_unique<ShiftWindowBlock<T>>(d, heads, window, shifted ? shift : 0, mlp_ratio, relative_bias));
    }
    this->register_module("block" + std::to_string(i), *blocks.back());
  }
  if (with_merge) {
    merge = std::make_unique<TurbineMerge<T>>(d);
    this->register_module("merge", *merge);
  }
  if (fusion_variant != FusionVariant::empty) {
    fusion = std::make_unique<ChannelFusion<T>>(output_dim(), fusion_reduction, fusion_variant);
    this->register_module("fusion", *fusion);
  }
}

template <typename T>
FeatureMap<T> Stage<T>::forward(const FeatureMap<T>& map) {
  FeatureMap<T> x = map;
  for (const auto& b : blocks) x = b->forward(x);
  if (merge) x = merge->forward(x);
  if (fusion) x = fusion->forward(x);
  return x;
}

template <typename T>
PredictionHead<T>::PredictionHead(std::size_t in, std::size_t turbines) : proj(in, turbines) {
  this->register_module("proj", proj);
}

template <typename T>
Tensor<T> PredictionHead<T>::forward(const FeatureMap<T>& map) const {
  const std::size_t B = map.x.dim(0);
  const std::size_t features = map.x.numel() / B;
  if (features != proj.in_features)
    throw DimensionError("prediction head expects " + std::to_string(proj.in_features) + " features per sample, got " +
                         shape_to_string(map.x.shape()));
  return proj.forward(ops::reshape(map.x, {B, features}));
}

#define WINDFORMER_INSTANTIATE_SPATIAL(T)                                                          \
  template struct FeatureMap<T>;                                                                   \
  template FeatureMap<T> pad_to_window_multiple(const FeatureMap<T>&, std::size_t, std::size_t);   \
  template Tensor<T> window_partition(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> window_reverse(const Tensor<T>&, std::size_t, std::size_t, std::size_t);      \
  template Tensor<T> cyclic_shift(const Tensor<T>&, std::int64_t);                                 \
  template class WindowAttention<T>;                                                               \
  template class ShiftWindowBlock<T>;                                                              \
  template class ConvBlock<T>;                                                                     \
  template class TurbineMerge<T>;                                                                  \
  template class ChannelFusion<T>;                                                                 \
  template class Stage<T>;                                                                         \
  template class PredictionHead<T>;

WINDFORMER_INSTANTIATE_SPATIAL(float)
WINDFORMER_INSTANTIATE_SPATIAL(double)

}  // namespace windformer

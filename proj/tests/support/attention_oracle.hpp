#pragma once

// Brute-force multi-head self-attention over every token, written with plain
// loops from the attention module's weights. Shares no code with the module.

#include <cmath>
#include <vector>

#include "windformer/spatial.hpp"

namespace windformer::testing {

/// tokens: [N, C] row-major. Returns [N, C].
inline std::vector<double> dense_attention(const WindowAttention<double>& attn, const std::vector<double>& tokens,
                                           std::size_t N) {
  const std::size_t C = attn.dim, H = attn.heads, dh = C / H;
  const auto W = attn.qkv.weight.data();
  const auto b = attn.qkv.bias.data();
  std::vector<double> qkv(N * 3 * C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < 3 * C; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < C; ++i) s += W[o * C + i] * tokens[n * C + i];
      qkv[n * 3 * C + o] = s;
    }
  std::vector<double> heads_out(N * C, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<double> score(N);
      double mx = -1e300;
      for (std::size_t j = 0; j < N; ++j) {
        double s = 0;
        for (std::size_t d = 0; d < dh; ++d) s += qkv[i * 3 * C + h * dh + d] * qkv[j * 3 * C + C + h * dh + d];
        score[j] = s * scale;
        mx = std::max(mx, score[j]);
      }
      double z = 0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t d = 0; d < dh; ++d)
          heads_out[i * C + h * dh + d] += score[j] / z * qkv[j * 3 * C + 2 * C + h * dh + d];
    }
  const auto P = attn.proj.weight.data();
  const auto pb = attn.proj.bias.data();
  std::vector<double> out(N * C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < C; ++o) {
      double s = pb[o];
      for (std::size_t i = 0; i < C; ++i) s += P[o * C + i] * heads_out[n * C + i];
      out[n * C + o] = s;
    }
  return out;
}

/// Whether two cells of a map cyclically shifted by `shift` came from
/// positions that were contiguous before the shift: a window that straddles
/// the wrap puts cells from opposite edges side by side.
inline bool contiguous_before_shift(std::size_t H, std::size_t W, std::size_t window, std::size_t shift,
                                    std::size_t cell_a, std::size_t cell_b) {
  auto orig = [&](std::size_t cell) {
    return std::pair{(cell / W + shift) % H, (cell % W + shift) % W};
  };
  const auto [ra, ca] = orig(cell_a);
  const auto [rb, cb] = orig(cell_b);
  auto dist = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
  return dist(ra, rb) < window && dist(ca, cb) < window;
}

}  // namespace windformer::testing

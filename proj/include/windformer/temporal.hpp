#pragma once

// Time feature extraction: recurrent cells run over the scene sequence in one
// or both directions, then Turbine Embed folds every cell's time history into
// one embedding vector.

#include <memory>
#include <string>
#include <vector>

#include "windformer/layers.hpp"

namespace windformer {

enum class TemporalVariant { empty, bi_convrnn, bi_convlstm, bi_gru, convgru, bi_convgru };

std::string to_string(TemporalVariant v);
TemporalVariant parse_temporal_variant(const std::string& text);

template <typename T>
struct RecurrentState {
  Tensor<T> h;  // [B, hidden, H, W]
  Tensor<T> c;  // LSTM cell memory; undefined for the other cells
};

/// One step of a recurrence on [B, C, H, W] inputs.
template <typename T>
class RecurrentCell : public Module<T> {
 public:
  /// Channels of the per-step output map.
  virtual std::size_t output_channels() const = 0;
  virtual RecurrentState<T> initial_state(std::size_t batch, std::size_t height, std::size_t width) const = 0;
  virtual RecurrentState<T> step(const Tensor<T>& x, const RecurrentState<T>& state) const = 0;
  /// The per-step output map [B, output_channels, H, W].
  virtual Tensor<T> output(const RecurrentState<T>& state) const { return state.h; }
};

/// z, r = sigmoid(conv([x, h])), h~ = tanh(conv([x, r*h])), h' = (1 - z) h + z h~.
/// The gate convolution emits the update gate z in its first `hidden`
/// channels and the reset gate r in the rest.
template <typename T>
class ConvGRUCell : public RecurrentCell<T> {
 public:
  ConvGRUCell(std::size_t in_channels, std::size_t hidden, std::size_t kernel);
  std::size_t output_channels() const override { return hidden; }
  RecurrentState<T> initial_state(std::size_t b, std::size_t h, std::size_t w) const override;
  RecurrentState<T> step(const Tensor<T>& x, const RecurrentState<T>& state) const override;

  std::size_t in_channels, hidden;
  Conv2d<T> gates;      // [2 * hidden, in + hidden, k, k]
  Conv2d<T> candidate;  // [hidden, in + hidden, k, k]
};

/// h' = tanh(conv([x, h])).
template <typename T>
class ConvRNNCell : public RecurrentCell<T> {
 public:
  ConvRNNCell(std::size_t in_channels, std::size_t hidden, std::size_t kernel);
  std::size_t output_channels() const override { return hidden; }
  RecurrentState<T> initial_state(std::size_t b, std::size_t h, std::size_t w) const override;
  RecurrentState<T> step(const Tensor<T>& x, const RecurrentState<T>& state) const override;

  std::size_t in_channels, hidden;
  Conv2d<T> conv;
};

/// i, f, o, g = conv([x, h]); c' = f c + i g; h' = o tanh(c').
template <typename T>
class ConvLSTMCell : public RecurrentCell<T> {
 public:
  ConvLSTMCell(std::size_t in_channels, std::size_t hidden, std::size_t kernel);
  std::size_t output_channels() const override { return hidden; }
  RecurrentState<T> initial_state(std::size_t b, std::size_t h, std::size_t w) const override;
  RecurrentState<T> step(const Tensor<T>& x, const RecurrentState<T>& state) const override;

  std::size_t in_channels, hidden;
  Conv2d<T> conv;
};

/// Non-convolutional GRU: the whole scene is flattened into one input vector
/// and the hidden vector has one unit per grid cell, read back as a
/// single-channel map.
template <typename T>
class FlatGRUCell : public RecurrentCell<T> {
 public:
  FlatGRUCell(std::size_t in_channels, std::size_t height, std::size_t width);
  std::size_t output_channels() const override { return 1; }
  RecurrentState<T> initial_state(std::size_t b, std::size_t h, std::size_t w) const override;
  RecurrentState<T> step(const Tensor<T>& x, const RecurrentState<T>& state) const override;

  std::size_t in_channels, height, width;
  Linear<T> input_gates;       // [3 * HW, C * HW] with bias: z, r, candidate
  Linear<T> hidden_gates;      // [2 * HW, HW]
  Linear<T> hidden_candidate;  // [HW, HW]
};

/// Runs `cell` from zero state over the steps in order and returns each step's output.
template <typename T>
std::vector<Tensor<T>> run_recurrence(const RecurrentCell<T>& cell, const std::vector<Tensor<T>>& steps);

/// Output t = channel concatenation [forward_t, backward_t], where the
/// forward cell has read steps 1..t and the backward cell steps T..t.
template <typename T>
std::vector<Tensor<T>> run_bidirectional(const RecurrentCell<T>& forward, const RecurrentCell<T>& backward,
                                         const std::vector<Tensor<T>>& steps);

/// Splits [B, T, C, H, W] into T tensors of [B, C, H, W].
template <typename T>
std::vector<Tensor<T>> split_time(const Tensor<T>& sequence);

/// Concatenates per-step maps [B, C, H, W] along channels in time order and
/// moves channels last: [B, H, W, T * C].
template <typename T>
Tensor<T> stack_time_channels_last(const std::vector<Tensor<T>>& maps);

template <typename T>
class TemporalEncoder : public Module<T> {
 public:
  TemporalEncoder(TemporalVariant variant, std::size_t in_channels, std::size_t hidden, std::size_t kernel,
                  std::size_t height, std::size_t width);

  /// [B, T, C, H, W] -> [B, H, W, T * output_channels()].
  Tensor<T> forward(const Tensor<T>& sequence) const;
  /// Per-step channels handed to Turbine Embed.
  std::size_t output_channels() const;

  TemporalVariant variant;
  std::size_t in_channels;
  std::unique_ptr<RecurrentCell<T>> forward_cell;
  std::unique_ptr<RecurrentCell<T>> backward_cell;
};

/// Per-cell linear map of the time-concatenated features to the embedding width.
template <typename T>
class TurbineEmbed : public Module<T> {
 public:
  TurbineEmbed(std::size_t in_features, std::size_t embed_dim);
  /// [B, H, W, in] -> [B, H, W, embed_dim].
  Tensor<T> forward(const Tensor<T>& x) const { return proj.forward(x); }

  Linear<T> proj;
};

}  // namespace windformer

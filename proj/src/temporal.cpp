#include "windformer/temporal.hpp"

#include <stdexcept>

namespace windformer {

std::string to_string(TemporalVariant v) {
  switch (v) {
    case TemporalVariant::empty:
      return "empty";
    case TemporalVariant::bi_convrnn:
      return "bi-convrnn";
    case TemporalVariant::bi_convlstm:
      return "bi-convlstm";
    case TemporalVariant::bi_gru:
      return "bi-gru";
    case TemporalVariant::convgru:
      return "convgru";
    case TemporalVariant::bi_convgru:
      return "bi-convgru";
  }
  return "?";
}

TemporalVariant parse_temporal_variant(const std::string& text) {
  for (auto v : {TemporalVariant::empty, TemporalVariant::bi_convrnn, TemporalVariant::bi_convlstm,
                 TemporalVariant::bi_gru, TemporalVariant::convgru, TemporalVariant::bi_convgru})
    if (to_string(v) == text) return v;
  throw std::invalid_argument("unknown temporal variant '" + text + "'");
}

namespace {

template <typename T>
void check_step_input(const Tensor<T>& x, const Tensor<T>& h, std::size_t in_channels) {
  if (x.rank() != 4 || x.dim(1) != in_channels || x.dim(0) != h.dim(0) || x.dim(2) != h.dim(2) ||
      x.dim(3) != h.dim(3))
    throw DimensionError("recurrent step input " + shape_to_string(x.shape()) + " does not fit state " +
                         shape_to_string(h.shape()) + " with " + std::to_string(in_channels) +
                         " input channels");
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return ops::add_scalar(ops::scale(x, T(-1)), T(1));
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvGRU.
// ---------------------------------------------------------------------------

template <typename T>
ConvGRUCell<T>::ConvGRUCell(std::size_t in, std::size_t hid, std::size_t k)
    : in_channels(in), hidden(hid), gates(in + hid, 2 * hid, k), candidate(in + hid, hid, k) {
  this->register_module("gates", gates);
  this->register_module("candidate", candidate);
}

template <typename T>
RecurrentState<T> ConvGRUCell<T>::initial_state(std::size_t b, std::size_t h, std::size_t w) const {
  return {Tensor<T>::zeros({b, hidden, h, w}), {}};
}

template <typename T>
RecurrentState<T> ConvGRUCell<T>::step(const Tensor<T>& x, const RecurrentState<T>& state) const {
  const auto& h = state.h;
  check_step_input(x, h, in_channels);
  const auto zr = ops::sigmoid(gates.forward(ops::concat<T>({x, h}, 1)));
  const auto z = ops::slice(zr, 1, 0, hidden);
  const auto r = ops::slice(zr, 1, hidden, hidden);
  const auto h_tilde = ops::tanh(candidate.forward(ops::concat<T>({x, ops::mul(r, h)}, 1)));
  return {ops::add(ops::mul(one_minus(z), h), ops::mul(z, h_tilde)), {}};
}

// ---------------------------------------------------------------------------
// ConvRNN and ConvLSTM.
// ---------------------------------------------------------------------------

template <typename T>
ConvRNNCell<T>::ConvRNNCell(std::size_t in, std::size_t hid, std::size_t k)
    : in_channels(in), hidden(hid), conv(in + hid, hid, k) {
  this->register_module("conv", conv);
}

template <typename T>
RecurrentState<T> ConvRNNCell<T>::initial_state(std::size_t b, std::size_t h, std::size_t w) const {
  return {Tensor<T>::zeros({b, hidden, h, w}), {}};
}

template <typename T>
RecurrentState<T> ConvRNNCell<T>::step(const Tensor<T>& x, const RecurrentState<T>& state) const {
  check_step_input(x, state.h, in_channels);
  return {ops::tanh(conv.forward(ops::concat<T>({x, state.h}, 1))), {}};
}

template <typename T>
ConvLSTMCell<T>::ConvLSTMCell(std::size_t in, std::size_t hid, std::size_t k)
    : in_channels(in), hidden(hid), conv(in + hid, 4 * hid, k) {
  this->register_module("conv", conv);
}

template <typename T>
RecurrentState<T> ConvLSTMCell<T>::initial_state(std::size_t b, std::size_t h, std::size_t w) const {
  return {Tensor<T>::zeros({b, hidden, h, w}), Tensor<T>::zeros({b, hidden, h, w})};
}

template <typename T>
RecurrentState<T> ConvLSTMCell<T>::step(const Tensor<T>& x, const RecurrentState<T>& state) const {
  check_step_input(x, state.h, in_channels);
  const auto g = conv.forward(ops::concat<T>({x, state.h}, 1));
  const auto i = ops::sigmoid(ops::slice(g, 1, 0, hidden));
  const auto f = ops::sigmoid(ops::slice(g, 1, hidden, hidden));
  const auto o = ops::sigmoid(ops::slice(g, 1, 2 * hidden, hidden));
  const auto u = ops::tanh(ops::slice(g, 1, 3 * hidden, hidden));
  const auto c = ops::add(ops::mul(f, state.c), ops::mul(i, u));
  return {ops::mul(o, ops::tanh(c)), c};
}

// ---------------------------------------------------------------------------
// Flat GRU.
// ---------------------------------------------------------------------------

template <typename T>
FlatGRUCell<T>::FlatGRUCell(std::size_t in, std::size_t h, std::size_t w)
    : in_channels(in),
      height(h),
      width(w),
      input_gates(in * h * w, 3 * h * w),
      hidden_gates(h * w, 2 * h * w, false),
      hidden_candidate(h * w, h * w, false) {
  this->register_module("input_gates", input_gates);
  this->register_module("hidden_gates", hidden_gates);
  this->register_module("hidden_candidate", hidden_candidate);
}

template <typename T>
RecurrentState<T> FlatGRUCell<T>::initial_state(std::size_t b, std::size_t h, std::size_t w) const {
  return {Tensor<T>::zeros({b, 1, h, w}), {}};
}

template <typename T>
RecurrentState<T> FlatGRUCell<T>::step(const Tensor<T>& x, const RecurrentState<T>& state) const {
  check_step_input(x, state.h, in_channels);
  const std::size_t b = x.dim(0), cells = height * width;
  const auto xin = input_gates.forward(ops::reshape(x, {b, in_channels * cells}));
  const auto h = ops::reshape(state.h, {b, cells});
  const auto hg = hidden_gates.forward(h);
  const auto z = ops::sigmoid(ops::add(ops::slice(xin, 1, 0, cells), ops::slice(hg, 1, 0, cells)));
  const auto r = ops::sigmoid(ops::add(ops::slice(xin, 1, cells, cells), ops::slice(hg, 1, cells, cells)));
  const auto h_tilde =
      ops::tanh(ops::add(ops::slice(xin, 1, 2 * cells, cells), hidden_candidate.forward(ops::mul(r, h))));
  const auto next = ops::add(ops::mul(one_minus(z), h), ops::mul(z, h_tilde));
  return {ops::reshape(next, {b, 1, height, width}), {}};
}

// ---------------------------------------------------------------------------
// Sequences.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<Tensor<T>> run_recurrence(const RecurrentCell<T>& cell, const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) throw DimensionError("recurrence over an empty sequence");
  auto state = cell.initial_state(steps[0].dim(0), steps[0].dim(2), steps[0].dim(3));
  std::vector<Tensor<T>> out;
  for (const auto& x : steps) {
    state = cell.step(x, state);
    out.push_back(cell.output(state));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> run_bidirectional(const RecurrentCell<T>& forward, const RecurrentCell<T>& backward,
                                         const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) throw DimensionError("recurrence over an empty sequence");
  const auto fwd = run_recurrence(forward, steps);
  const std::vector<Tensor<T>> reversed(steps.rbegin(), steps.rend());
  const auto bwd = run_recurrence(backward, reversed);
  std::vector<Tensor<T>> out;
  const std::size_t n = steps.size();
  for (std::size_t t = 0; t < n; ++t) out.push_back(ops::concat<T>({fwd[t], bwd[n - 1 - t]}, 1));
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_time(const Tensor<T>& sequence) {
  if (sequence.rank() != 5) throw DimensionError("expected [B, T, C, H, W], got " + shape_to_string(sequence.shape()));
  const auto& s = sequence.shape();
  std::vector<Tensor<T>> out;
  for (std::size_t t = 0; t < s[1]; ++t)
    out.push_back(ops::reshape(ops::slice(sequence, 1, t, 1), {s[0], s[2], s[3], s[4]}));
  return out;
}

template <typename T>
Tensor<T> stack_time_channels_last(const std::vector<Tensor<T>>& maps) {
  const auto stacked = maps.size() == 1 ? maps[0] : ops::concat(maps, 1);
  return ops::permute(stacked, {0, 2, 3, 1});
}

// ---------------------------------------------------------------------------
// Encoder and embed.
// ---------------------------------------------------------------------------

template <typename T>
TemporalEncoder<T>::TemporalEncoder(TemporalVariant v, std::size_t in, std::size_t hidden, std::size_t kernel,
                                    std::size_t height, std::size_t width)
    : variant(v), in_channels(in) {
  auto make = [&]() -> std::unique_ptr<RecurrentCell<T>> {
    switch (variant) {
      case TemporalVariant::bi_convrnn:
        return std::make_unique<ConvRNNCell<T>>(in, hidden, kernel);
      case TemporalVariant::bi_convlstm:
        return std::make_unique<ConvLSTMCell<T>>(in, hidden, kernel);
      case TemporalVariant::bi_gru:
        return std::make_unique<FlatGRUCell<T>>(in, height, width);
      case TemporalVariant::convgru:
      case TemporalVariant::bi_convgru:
        return std::make_unique<ConvGRUCell<T>>(in, hidden, kernel);
      case TemporalVariant::empty:
        break;
    }
    return nullptr;
  };
  forward_cell = make();
  if (forward_cell) this->register_module("forward", *forward_cell);
  if (variant != TemporalVariant::empty && variant != TemporalVariant::convgru) {
    backward_cell = make();
    this->register_module("backward", *backward_cell);
  }
}

template <typename T>
std::size_t TemporalEncoder<T>::output_channels() const {
  if (!forward_cell) return in_channels;
  return forward_cell->output_channels() * (backward_cell ? 2 : 1);
}

template <typename T>
Tensor<T> TemporalEncoder<T>::forward(const Tensor<T>& sequence) const {
  const auto steps = split_time(sequence);
  if (steps[0].dim(1) != in_channels)
    throw DimensionError("temporal encoder expects " + std::to_string(in_channels) + " channels, got " +
                         shape_to_string(sequence.shape()));
  if (!forward_cell) return stack_time_channels_last(steps);
  if (!backward_cell) return stack_time_channels_last(run_recurrence(*forward_cell, steps));
  return stack_time_channels_last(run_bidirectional(*forward_cell, *backward_cell, steps));
}

template <typename T>
TurbineEmbed<T>::TurbineEmbed(std::size_t in, std::size_t embed_dim) : proj(in, embed_dim) {
  this->register_module("proj", proj);
}

#define WINDFORMER_INSTANTIATE_TEMPORAL(T)                                                            \
  template class ConvGRUCell<T>;                                                                      \
  template class ConvRNNCell<T>;                                                                      \
  template class ConvLSTMCell<T>;                                                                     \
  template class FlatGRUCell<T>;                                                                      \
  template class TemporalEncoder<T>;                                                                  \
  template class TurbineEmbed<T>;                                                                     \
  template std::vector<Tensor<T>> run_recurrence(const RecurrentCell<T>&, const std::vector<Tensor<T>>&); \
  template std::vector<Tensor<T>> run_bidirectional(const RecurrentCell<T>&, const RecurrentCell<T>&,     \
                                                    const std::vector<Tensor<T>>&);                      \
  template std::vector<Tensor<T>> split_time(const Tensor<T>&);                                       \
  template Tensor<T> stack_time_channels_last(const std::vector<Tensor<T>>&);

WINDFORMER_INSTANTIATE_TEMPORAL(float)
WINDFORMER_INSTANTIATE_TEMPORAL(double)

}  // namespace windformer

#pragma once

// Parameterized wrappers around the core ops.

#include "windformer/module.hpp"
#include "windformer/ops.hpp"

namespace windformer {

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::size_t in, std::size_t out, bool bias = true);
  Tensor<T> forward(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }

  std::size_t in_features, out_features;
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out], undefined without bias
};

/// Same-padded square convolution on [B, C, H, W].
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel);
  Tensor<T> forward(const Tensor<T>& x) const { return ops::conv2d(x, weight, bias, kernel / 2); }

  std::size_t in_channels, out_channels, kernel;
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]
};

template <typename T>
class LayerNorm : public Module<T> {
 public:
  explicit LayerNorm(std::size_t dim);
  Tensor<T> forward(const Tensor<T>& x) const { return ops::layernorm(x, gamma, beta); }

  Tensor<T> gamma, beta;
};

/// Batch normalization over the last axis; follows the module's train/eval mode.
template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(std::size_t channels);
  Tensor<T> forward(const Tensor<T>& x) {
    return ops::batchnorm(x, gamma, beta, state, this->mode(), -1);
  }

  Tensor<T> gamma, beta;
  ops::BatchNormState<T> state;
};

extern template class Linear<float>;
extern template class Linear<double>;
extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class LayerNorm<float>;
extern template class LayerNorm<double>;
extern template class BatchNorm<float>;
extern template class BatchNorm<double>;

}  // namespace windformer

#include "windformer/layers.hpp"

namespace windformer {

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, bool with_bias) : in_features(in), out_features(out) {
  weight = this->register_parameter("weight", {out, in}, Init::normal());
  if (with_bias) bias = this->register_parameter("bias", {out}, Init::zeros());
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t k)
    : in_channels(in), out_channels(out), kernel(k) {
  if (k % 2 == 0) throw DimensionError("convolution kernel must be odd, got " + std::to_string(k));
  weight = this->register_parameter("weight", {out, in, k, k}, Init::normal());
  bias = this->register_parameter("bias", {out}, Init::zeros());
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim) {
  gamma = this->register_parameter("weight", {dim}, Init::ones());
  beta = this->register_parameter("bias", {dim}, Init::zeros());
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels) : state(channels) {
  gamma = this->register_parameter("weight", {channels}, Init::ones());
  beta = this->register_parameter("bias", {channels}, Init::zeros());
  this->register_batchnorm("stats", state);
}

template class Linear<float>;
template class Linear<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;

}  // namespace windformer

#include "windformer/module.hpp"

#include <random>

namespace windformer {

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
Tensor<T> Module<T>::register_parameter(const std::string& name, Shape shape, Init init) {
  auto tensor = Tensor<T>::zeros(std::move(shape), true);
  if (init.kind == Init::Kind::constant)
    for (auto& v : tensor.mutable_data()) v = static_cast<T>(init.value);
  params_.push_back({name, tensor, init});
  return tensor;
}

template <typename T>
void Module<T>::register_module(const std::string& name, Module& child) {
  children_.emplace_back(name, &child);
}

template <typename T>
void Module<T>::register_batchnorm(const std::string& name, ops::BatchNormState<T>& state) {
  batchnorms_.emplace_back(name, &state);
}

template <typename T>
void Module<T>::collect(const std::string& prefix, std::vector<Parameter<T>>& out,
                        std::vector<const Init*>* inits) const {
  for (const auto& e : params_) {
    out.push_back({prefix + e.name, e.tensor});
    if (inits) inits->push_back(&e.init);
  }
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out, inits);
}

template <typename T>
void Module<T>::collect_bn(const std::string& prefix, std::vector<NamedBatchNorm<T>>& out) const {
  for (const auto& [name, state] : batchnorms_) out.push_back({prefix + name, state});
  for (const auto& [name, child] : children_) child->collect_bn(prefix + name + ".", out);
}

template <typename T>
std::vector<Parameter<T>> Module<T>::parameters() const {
  std::vector<Parameter<T>> out;
  collect("", out, nullptr);
  return out;
}

template <typename T>
std::vector<NamedBatchNorm<T>> Module<T>::batchnorm_states() const {
  std::vector<NamedBatchNorm<T>> out;
  collect_bn("", out);
  return out;
}

template <typename T>
std::size_t Module<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
void Module<T>::initialize(std::uint64_t seed) {
  std::vector<Parameter<T>> params;
  std::vector<const Init*> inits;
  collect("", params, &inits);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].tensor.mutable_data();
    const Init& init = *inits[i];
    if (init.kind == Init::Kind::constant) {
      for (auto& v : values) v = static_cast<T>(init.value);
      continue;
    }
    std::mt19937_64 rng(stable_hash(params[i].name, seed));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : values) {
      double z;
      do {
        z = dist(rng);
      } while (z < -2.0 || z > 2.0);
      v = static_cast<T>(z * init.value);
    }
  }
  for (auto& bn : batchnorm_states()) *bn.state = ops::BatchNormState<T>(bn.state->running_mean.size());
}

template <typename T>
void Module<T>::set_mode(ops::NormMode mode) {
  mode_ = mode;
  for (auto& [name, child] : children_) child->set_mode(mode);
}

template <typename T>
void Module<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template class Module<float>;
template class Module<double>;

}  // namespace windformer

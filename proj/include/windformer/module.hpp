#pragma once

// Parameter ownership for layers. A Module registers its own parameters,
// batch-norm statistics and child modules under hierarchical dotted names.
// Modules are pinned in memory (children are referenced by address), so they
// are neither copyable nor movable; hold them by value as members or via
// unique_ptr.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "windformer/ops.hpp"
#include "windformer/tensor.hpp"

namespace windformer {

/// How a parameter is filled by Module::initialize.
struct Init {
  enum class Kind { truncated_normal, constant };
  Kind kind = Kind::truncated_normal;
  double value = 0.02;  // std for truncated_normal, fill value for constant

  static Init normal(double std = 0.02) { return {Kind::truncated_normal, std}; }
  static Init zeros() { return {Kind::constant, 0.0}; }
  static Init ones() { return {Kind::constant, 1.0}; }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct NamedBatchNorm {
  std::string name;
  ops::BatchNormState<T>* state;
};

template <typename T>
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  Module(Module&&) = delete;
  Module& operator=(Module&&) = delete;

  /// Every parameter in registration order, depth first.
  std::vector<Parameter<T>> parameters() const;
  std::vector<NamedBatchNorm<T>> batchnorm_states() const;
  std::size_t parameter_count() const;

  /// Deterministic fill: each parameter draws from its own generator seeded by
  /// (seed, full name), so identically named parameters in different model
  /// variants receive identical values.
  void initialize(std::uint64_t seed);

  void set_mode(ops::NormMode mode);
  ops::NormMode mode() const { return mode_; }
  void train() { set_mode(ops::NormMode::train); }
  void eval() { set_mode(ops::NormMode::eval); }

  void zero_grad();

 protected:
  Tensor<T> register_parameter(const std::string& name, Shape shape, Init init);
  void register_module(const std::string& name, Module& child);
  void register_batchnorm(const std::string& name, ops::BatchNormState<T>& state);

 private:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    Init init;
  };
  void collect(const std::string& prefix, std::vector<Parameter<T>>& out,
               std::vector<const Init*>* inits) const;
  void collect_bn(const std::string& prefix, std::vector<NamedBatchNorm<T>>& out) const;

  std::vector<Entry> params_;
  std::vector<std::pair<std::string, Module*>> children_;
  std::vector<std::pair<std::string, ops::BatchNormState<T>*>> batchnorms_;
  ops::NormMode mode_ = ops::NormMode::train;
};

/// FNV-1a, used wherever a stable string hash feeds a seed.
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0);

extern template class Module<float>;
extern template class Module<double>;

}  // namespace windformer

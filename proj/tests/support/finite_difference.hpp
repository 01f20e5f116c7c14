#pragma once

// Central finite-difference oracle, independent of the reverse-mode sweep.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "windformer/ops.hpp"
#include "windformer/tensor.hpp"

namespace windformer::testing {

/// d loss / d x by central differences, perturbing x in place.
inline std::vector<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& loss,
                                            double h = 1e-6) {
  NoGradGuard no_grad;
  auto values = x.mutable_data();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-8) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0,
                                    bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::from_vector(std::move(shape), std::move(v), requires_grad);
}

inline Tensor<float> random_tensor_f(Shape shape, std::mt19937_64& rng, float scale = 1.0f,
                                     bool requires_grad = false) {
  std::normal_distribution<float> dist(0.0f, scale);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<float>::from_vector(std::move(shape), std::move(v), requires_grad);
}

/// Projects an arbitrary output onto a fixed random direction so that every
/// output element contributes to the scalar being differentiated.
class RandomProjection {
 public:
  RandomProjection(Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    weights_ = random_tensor(std::move(shape), rng, 1.0, false);
  }
  Tensor<double> operator()(const Tensor<double>& y) const {
    return ops::sum(ops::mul(y, weights_));
  }

 private:
  Tensor<double> weights_;
};

/// Checks reverse-mode gradients of `build` (a scalar-valued function of the
/// given inputs) against central differences on every input coordinate.
inline double gradient_error(std::vector<Tensor<double>> inputs,
                             const std::function<Tensor<double>()>& build, double h = 1e-6,
                             double floor = 1e-8) {
  for (auto& t : inputs) t.zero_grad();
  build().backward();
  double worst = 0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const auto numeric = numeric_gradient(t, [&] { return build().item(); }, h);
    worst = std::max(worst, max_relative_error(analytic, numeric, floor));
  }
  return worst;
}

}  // namespace windformer::testing

#pragma once

// Dense row-major tensor with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Ops create new nodes that keep
// their inputs alive and carry a backward closure; backward() orders every
// reachable node by creation sequence (a valid topological order) and replays
// the closures in reverse. Gradients of leaves accumulate across calls.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace windformer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Incompatible shapes or dimension counts.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Precondition violated by the caller (for example, backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

std::uint64_t next_node_sequence();

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  /// Size of dimension `axis`; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node().value.size(); }

  std::span<const T> data() const { return node().value; }
  /// Direct write access; intended for parameter updates and test fixtures.
  std::span<T> mutable_data() { return node().value; }
  T item() const;
  T at(std::size_t flat_index) const { return node().value.at(flat_index); }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value) { node().requires_grad = value; }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Throws ContractError otherwise.
  void backward() const;

  /// Copy of the values with no graph history.
  Tensor detach() const;

  Node<T>& node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return *node_;
  }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Builds an op result. Records parents and the backward closure only when
/// grad mode is on and at least one parent requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> parents,
                      std::function<void(Node<T>&)> backward_fn);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& parents,
                      std::function<void(Node<T>&)> backward_fn);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace windformer

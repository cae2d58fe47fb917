// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense row-major tensors with define-by-run reverse-mode autodiff.
 *
 * A Tensor is a shared handle onto a graph node. Values are immutable once a
 * node is built; only gradients (and leaf data, through mutable_data(), for
 * optimizer updates between graphs) change afterwards. Every operation that
 * consumes a tensor with requires_grad records a backward closure, and
 * backward() replays those closures in reverse topological order.
 */
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad; // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  const char *op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents that require grad.
  std::function<void(Node &)> backward_fn;

  std::vector<double> &ensure_grad() {
    if (grad.empty())
      grad.assign(data.size(), 0.0);
    return grad;
  }
};

} // namespace detail

class Tensor {
public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape &shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct access to a leaf's values; used by optimizers between graphs.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Allocates a zero gradient on first access.
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history, requires_grad = false.
  Tensor detach() const;

  void backward() const;

  const std::shared_ptr<detail::Node> &node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

private:
  std::shared_ptr<detail::Node> node_;
};

/// Gradient recording is enabled per thread; the guard disables it in scope.
bool grad_enabled();

class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

/**
 * Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
 * @p loss. Leaf gradients accumulate across calls; interior gradients are
 * reset on each call so a repeated backward adds exactly one more copy.
 */
void backward(const Tensor &loss);

/// Nodes reachable from @p root, parents before children.
std::vector<detail::Node *> topological_order(const Tensor &root);

namespace detail {

/// Builds a result node; records history only when grad mode is on and some
/// parent requires grad.
Tensor make_result(Shape shape, std::vector<double> data, const char *op,
                   std::vector<Tensor> parents,
                   std::function<void(Node &)> backward_fn);

} // namespace detail

} // namespace evf

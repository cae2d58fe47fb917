// SPDX-License-Identifier: Apache-2.0
#include "evf/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace evf {

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto extent : shape)
    n *= extent;
  return n;
}

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape &shape, std::size_t data_size) {
  if (shape.empty())
    throw std::invalid_argument("tensor shape must have at least one extent");
  for (auto extent : shape)
    if (extent == 0)
      throw std::invalid_argument("tensor extents must be positive, got " +
                                  shape_str(shape));
  if (shape_numel(shape) != data_size)
    throw std::invalid_argument("tensor shape " + shape_str(shape) +
                                " does not match " +
                                std::to_string(data_size) + " values");
}

detail::Node &deref(const std::shared_ptr<detail::Node> &node) {
  if (!node)
    throw std::logic_error("use of undefined tensor");
  return *node;
}

} // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape, data.size());
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape &Tensor::shape() const { return deref(node_).shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto &s = shape();
  if (axis >= s.size())
    throw std::out_of_range("axis " + std::to_string(axis) +
                            " out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return deref(node_).data.size(); }

std::span<const double> Tensor::data() const { return deref(node_).data; }

std::span<double> Tensor::mutable_data() { return deref(node_).data; }

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item() on tensor of shape " +
                                shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (dim() != 2)
    throw std::invalid_argument("at(row, col) requires a matrix, got " +
                                shape_str(shape()));
  return node_->data[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return deref(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  auto &n = deref(node_);
  if (!n.is_leaf)
    throw std::logic_error("requires_grad can only be set on leaf tensors");
  n.requires_grad = value;
  if (!value)
    n.grad.clear();
}

bool Tensor::is_leaf() const { return deref(node_).is_leaf; }

bool Tensor::has_grad() const { return !deref(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return deref(node_).grad; }

std::span<double> Tensor::mutable_grad() { return deref(node_).ensure_grad(); }

void Tensor::zero_grad() { deref(node_).grad.clear(); }

Tensor Tensor::detach() const {
  const auto &n = deref(node_);
  return Tensor(n.shape, n.data, false);
}

void Tensor::backward() const { evf::backward(*this); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::vector<detail::Node *> topological_order(const Tensor &root) {
  std::vector<detail::Node *> order;
  std::unordered_set<detail::Node *> visited;
  // Iterative post-order DFS; graphs can be deep enough to overflow recursion.
  std::vector<std::pair<detail::Node *, std::size_t>> stack;
  auto *start = root.node().get();
  if (!start)
    return order;
  stack.emplace_back(start, 0);
  visited.insert(start);
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      auto *parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor &loss) {
  if (!loss.defined())
    throw std::invalid_argument("backward on undefined tensor");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_str(loss.shape()));
  if (!loss.requires_grad())
    return;
  auto order = topological_order(loss);
  for (auto *node : order)
    if (!node->is_leaf)
      node->grad.assign(node->data.size(), 0.0);
  auto &root = *loss.node();
  root.ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto *node = *it;
    if (!node->is_leaf && node->backward_fn)
      node->backward_fn(*node);
  }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, const char *op,
                   std::vector<Tensor> parents,
                   std::function<void(Node &)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs_grad = false;
  if (g_grad_enabled)
    for (const auto &p : parents)
      needs_grad = needs_grad || p.requires_grad();
  if (needs_grad) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents.reserve(parents.size());
    for (auto &p : parents)
      node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

} // namespace detail

} // namespace evf

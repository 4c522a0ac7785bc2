#include "grafuse/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "grafuse/error.hpp"

namespace grafuse {

namespace detail {

struct Node {
  std::string op;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_product(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->op = "leaf";
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from({n, n}, std::move(v));
}

Tensor Tensor::make_op(std::string_view op, Shape shape, std::vector<double> values,
                       std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values));
  out.node_->op = std::string(op);
  const bool track = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (track) {
    out.node_->requires_grad = true;
    out.node_->inputs = std::move(inputs);
    out.node_->backward = std::move(backward);
  }
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() <= 1) return 1;
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.empty()) return 1;
  return s.back();
}

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::accumulate_grad(std::span<const double> g) const {
  if (!node_->requires_grad) return;
  auto& buf = node_->grad;
  if (buf.empty()) buf.assign(node_->value.size(), 0.0);
  if (g.size() != buf.size()) {
    throw DimensionError("gradient of size " + std::to_string(g.size()) + " for tensor " +
                         shape_string(node_->shape));
  }
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from(node_->shape, node_->value, false); }

Tensor Tensor::clone() const { return from(node_->shape, node_->value, node_->requires_grad); }

std::string_view Tensor::op() const { return node_->op; }

void Tensor::backward() const {
  if (!defined() || size() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (defined() ? shape_string(shape()) : std::string("undefined tensor")));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a loss with no gradient-tracking ancestors");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].node_.get();
      if (child && child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  // Interior buffers are per-sweep; leaves keep accumulating.
  for (detail::Node* n : order) {
    if (!n->inputs.empty()) n->grad.clear();
  }
  const double one = 1.0;
  Tensor(node_).accumulate_grad(std::span<const double>(&one, 1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(BackwardContext{n->grad, n->value, n->inputs});
  }
}

}  // namespace grafuse

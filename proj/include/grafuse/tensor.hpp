#pragma once

// Dense f64 tensors with a reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Operations whose inputs
// require gradients record their inputs and a backward rule on the result
// node; Tensor::backward() walks that DAG once in reverse topological order.
// Leaf gradients accumulate across backward() calls until zero_grad().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grafuse {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tensor;

/// Everything a backward rule may look at.
struct BackwardContext {
  std::span<const double> grad;   // dL/d(output)
  std::span<const double> value;  // output values
  std::span<Tensor> inputs;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  /// Builds an op result. The tape entry is recorded only if some input
  /// requires a gradient; otherwise the result is a plain constant.
  static Tensor make_op(std::string_view op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  /// Rows/cols of the 2-D view: rank-1 [n] reads as 1 x n, rank-0 as 1 x 1.
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return size() == 1; }

  std::span<const double> values() const;
  /// In-place access for optimizers and initializers. Never call on a tensor
  /// whose value has been captured by a live tape.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient buffer; empty when no gradient has been accumulated.
  std::span<const double> grad() const;
  void accumulate_grad(std::span<const double> g) const;
  void zero_grad();

  /// Same values, no tape history, no grad requirement.
  Tensor detach() const;
  /// Deep copy of values (and requires_grad flag) into a fresh leaf.
  Tensor clone() const;

  std::string_view op() const;

  /// Reverse sweep from a scalar loss.
  void backward() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Dense boolean mask (1 = admissible) matching a score matrix.
using Mask = std::vector<std::uint8_t>;

// ---- core differentiable operations ------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise binary ops: shapes equal, or either side scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// x[m x n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Inverted dropout. The keep/drop pattern is a pure function of
/// (seed, epoch, layer, element index). Identity when train == false.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t layer = 0;
};
Tensor dropout(const Tensor& x, double rate, bool train, DropoutKey key);

/// Row-wise softmax with max subtraction. Masked entries are exactly 0.
Tensor row_softmax(const Tensor& scores, const Mask& mask = {});
Tensor log_softmax(const Tensor& scores);

/// Per-row normalization to zero mean / unit population variance, then affine.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean negative log-likelihood of labels[i] under row log-probabilities at rows `ids`.
Tensor nll_loss(const Tensor& log_probs, std::span<const std::uint32_t> ids,
                std::span<const std::uint16_t> labels);
/// Same, on probabilities (clamped away from zero).
Tensor nll_from_probs(const Tensor& probs, std::span<const std::uint32_t> ids,
                      std::span<const std::uint16_t> labels);
/// log_softmax + nll_loss.
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> ids,
                     std::span<const std::uint16_t> labels);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor select_column(const Tensor& x, std::size_t col);
Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> rows);
/// Element i of a tensor, as a scalar.
Tensor pick(const Tensor& x, std::size_t index);

}  // namespace grafuse

#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle. Ops create result tensors that remember their
// inputs and a closure that pushes the result's gradient into those inputs;
// the graph lives exactly as long as the tensors that reference it.
//
// Gradient accumulation order is part of the contract: every op folds
// contributions into an input's gradient in increasing row order, directly in
// the input's buffer. Consequently running backward on two graphs one after
// another (without zeroing) leaves parameters with the same bits as one graph
// whose rows are the concatenation of both, which is what packed training
// relies on.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace blockdiff {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  /// Receives the result's gradient; must accumulate into input gradients.
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Result of an op. `requires_grad` is inferred from the parents; the
  /// closure is dropped when no parent needs a gradient.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  /// Writable values. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient storage, allocated as zeros on first use.
  std::span<double> grad_buffer() const;
  /// Drops the gradient; it becomes absent again.
  void zero_grad() const;

  const std::vector<Tensor>& parents() const;

  /// Identity comparison (same underlying node).
  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend void backward(const Tensor& loss);
  friend std::vector<Tensor> topological_order(const Tensor& root);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Nodes reachable from `root` through requires-grad edges, inputs before
/// consumers. Each node appears once.
std::vector<Tensor> topological_order(const Tensor& root);

/// Seeds d(loss)/d(loss) = 1 and propagates to every reachable
/// requires-grad tensor. Leaf gradients accumulate across calls; interior
/// gradients are recomputed from zero on every call.
void backward(const Tensor& loss);

}  // namespace blockdiff

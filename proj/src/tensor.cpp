#include "blockdiff/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "blockdiff/error.hpp"

namespace blockdiff {

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty == absent
  bool requires_grad = false;
  std::vector<Tensor> parents;
  Tensor::BackwardFn backward;
};
}  // namespace detail

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) {
      out += "x";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           std::vector<Tensor> parents, BackwardFn backward) {
  Tensor out = from_values(std::move(shape), std::move(values), false);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    out.impl_->requires_grad = true;
    out.impl_->parents = std::move(parents);
    out.impl_->backward = std::move(backward);
  }
  return out;
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->values.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::span<const double> Tensor::values() const { return impl_->values; }
std::span<double> Tensor::mutable_values() { return impl_->values; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::is_leaf() const { return !impl_->backward; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  }
  return impl_->grad;
}

void Tensor::zero_grad() const { impl_->grad.clear(); }

const std::vector<Tensor>& Tensor::parents() const { return impl_->parents; }

std::vector<Tensor> topological_order(const Tensor& root) {
  std::vector<Tensor> order;
  if (!root.requires_grad()) {
    return order;
  }
  std::unordered_set<const detail::TensorImpl*> seen;
  // Iterative post-order DFS; parents are expanded in declaration order.
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& parents = node.impl_->parents;
    if (next < parents.size()) {
      const Tensor& p = parents[next++];
      if (p.requires_grad() && seen.insert(p.impl_.get()).second) {
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that does not depend on any requires_grad tensor");
  }
  std::vector<Tensor> order = topological_order(loss);
  for (Tensor& t : order) {
    if (!t.is_leaf()) {
      t.impl_->grad.assign(t.numel(), 0.0);
    }
  }
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl& node = *it->impl_;
    if (node.backward) {
      node.backward(node.grad);
    }
  }
}

}  // namespace blockdiff

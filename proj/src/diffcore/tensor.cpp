#include "tomotx/diffcore/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "tomotx/common/error.hpp"

namespace tomotx::diff {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->data.assign(static_cast<size_t>(diff::numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != diff::numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(data.size()) + " values cannot fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

int64_t Tensor::dim(int i) const {
  const int n = ndim();
  const int k = i < 0 ? n + i : i;
  if (k < 0 || k >= n) throw ShapeError("tensor: dim " + std::to_string(i) + " out of range for " + shape_str(shape()));
  return node_->shape[static_cast<size_t>(k)];
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("tensor: item() on shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::detach() const { return from_data(node_->shape, node_->data, false); }

void Tensor::backward() const {
  if (!node_ || numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + (node_ ? shape_str(shape()) : "undefined"));
  }
  if (!node_->requires_grad) throw ContractError("backward: loss does not depend on any tracked tensor");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  // Release the graph; only leaf gradients remain.
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace tomotx::diff

#include "messfn/tensor.h"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace messfn {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
std::span<T> TensorNode<T>::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<TensorNode<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->is_leaf()) {
    throw TapeError("cannot mutate the values of a recorded op output");
  }
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> data,
                                 std::vector<Tensor> parents,
                                 std::function<void(TensorNode<T>&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) {
    if (p.requires_grad()) {
      if (p.node_->consumed) {
        throw TapeError("op input belongs to a graph already consumed by backward");
      }
      any = true;
    }
  }
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward requires a scalar loss");
  }
  auto root = loss.node();
  if (root->consumed) {
    throw TapeError("graph already consumed by a previous backward; re-run forward");
  }
  if (!root->requires_grad) {
    throw TapeError("loss does not depend on any tensor that requires grad");
  }

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }

  for (auto* node : order) {
    if (node->is_leaf()) continue;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->consumed = true;
  }
}

template <typename T>
Parameter<T>::Parameter(const Shape& shape)
    : Parameter(shape, std::vector<T>(shape_numel(shape), T(0))) {}

template <typename T>
Parameter<T>::Parameter(const Shape& shape, std::vector<T> init)
    : value(shape, std::move(init), true),
      adam_m(shape_numel(shape), T(0)),
      adam_v(shape_numel(shape), T(0)) {
  value.node()->ensure_grad();
}

template struct TensorNode<float>;
template struct TensorNode<double>;
template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template struct Parameter<float>;
template struct Parameter<double>;

}  // namespace messfn

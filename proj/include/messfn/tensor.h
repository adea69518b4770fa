#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace messfn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Raised when tensor shapes or layer configurations disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised on misuse of the gradient tape (non-scalar loss, consumed graph).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  // Empty until the node takes part in a backward pass (or is a Parameter).
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  // Zero-filled grad buffer of a parent, allocated on first use.
  std::span<T> ensure_grad();
};

// Dense row-major tensor handle. Copies share storage; the graph recorded by
// differentiable ops hangs off the shared node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Writable view for leaves only (initialization, perturbation, optimizer).
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad();

  // Copy of the values with no graph attached.
  Tensor detach() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

  // Builds an op output. Records the backward closure only when grad mode is
  // on and at least one parent requires grad.
  static Tensor make_result(Shape shape, std::vector<T> data,
                            std::vector<Tensor> parents,
                            std::function<void(TensorNode<T>&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Leaf grads accumulate
// additively; intermediate grads and the recorded graph are released.
template <typename T>
void backward(const Tensor<T>& loss);

bool grad_enabled();

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Trainable tensor plus its Adam moment buffers.
template <typename T>
struct Parameter {
  Tensor<T> value;
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  std::uint64_t step_count = 0;

  Parameter() = default;
  explicit Parameter(const Shape& shape);
  Parameter(const Shape& shape, std::vector<T> init);

  const Shape& shape() const { return value.shape(); }
  std::size_t numel() const { return value.numel(); }
};

}  // namespace messfn

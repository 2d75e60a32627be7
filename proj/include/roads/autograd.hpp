#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "roads/tensor.hpp"

namespace roads {

// One vertex of the reverse-mode graph. Leaves (parameters, inputs) have no
// backward function; interior nodes accumulate into their inputs' grads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Grad buffer, zero-allocated on first use.
  Tensor& grad_buffer();
  bool has_grad() const { return grad.numel() == value.numel() && !grad.empty(); }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Zero tensor when no gradient has been accumulated.
  Tensor grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

  // Interior node whose grad requirement is inherited from the inputs. When
  // no input needs a gradient, the graph edge is not recorded.
  static Var from_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse accumulation from a scalar root.
void backward(const Var& root);

}  // namespace roads

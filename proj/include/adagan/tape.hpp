#pragma once

// Reverse-mode autodiff tape. Nodes are recorded in forward order, which
// is a topological order by construction; backward() walks it in reverse.
// Gradients are accumulated lazily: a node with no upstream contribution
// keeps an empty grad and its backward closure is skipped.

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "adagan/tensor.hpp"

namespace adagan {

class Tape;

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

using BackwardFn = std::function<void(Tape&)>;

class Tape {
 public:
  Var leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), Tensor(), nullptr});
    return Var{static_cast<int32_t>(nodes_.size()) - 1};
  }

  Var record(Tensor value, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward)});
    return Var{static_cast<int32_t>(nodes_.size()) - 1};
  }

  // Record an op whose backward closure needs its own output handle:
  // make_backward(out) must return the BackwardFn.
  template <typename F>
  Var record_op(Tensor value, F&& make_backward) {
    Var out{static_cast<int32_t>(nodes_.size())};
    nodes_.push_back(Node{std::move(value), Tensor(), make_backward(out)});
    return out;
  }

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  Tensor& value(Var v) { return nodes_[static_cast<size_t>(v.id)].value; }

  bool has_grad(Var v) const { return !nodes_[static_cast<size_t>(v.id)].grad.empty(); }

  // Zero-filled on first access.
  Tensor& grad(Var v) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

  // Accumulate into a node's gradient. The first contribution is moved in,
  // so single-consumer nodes never pay for a zero-fill plus add.
  void add_grad(Var v, Tensor&& g) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!g.same_shape(n.value)) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                       shape_str(n.value.shape()));
    }
    if (n.grad.empty()) {
      n.grad = std::move(g);
      return;
    }
    float* dst = n.grad.data();
    const float* src = g.data();
    const int64_t count = g.size();
    for (int64_t i = 0; i < count; ++i) dst[i] += src[i];
  }

  // Reverse sweep from a scalar loss. Repeating after zero_grads() gives
  // identical results.
  void backward(Var loss) {
    Node& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.value.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(ln.value.shape()));
    }
    if (ln.grad.empty()) ln.grad = Tensor::ones(ln.value.shape());
    for (int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.backward && !n.grad.empty()) n.backward(*this);
    }
  }

  void zero_grads() {
    for (Node& n : nodes_) n.grad = Tensor();
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
  };
  // deque: recording new nodes must not invalidate references
  // handed out by value()/grad()
  std::deque<Node> nodes_;
};

}  // namespace adagan

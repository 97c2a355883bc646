#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "vscreen/errors.hpp"
#include "vscreen/tensor.hpp"

namespace vscreen {

template <typename T>
class Tape;

// Handle to a node on a Tape. Creation order is topological order, which the
// backward sweep relies on.
template <typename T>
struct Var {
  std::uint32_t idx = 0;
};

// Reverse-mode tape: ops append nodes holding the forward value plus a
// closure that routes the node's gradient to its parents. One tape per
// forward/backward pass; gradients of leaves survive the sweep.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
    return Var<T>{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var<T> make_node(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn bw) {
    bool needs = false;
    for (Var<T> p : parents) needs = needs || nodes_.at(p.idx).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(bw) : nullptr});
    return Var<T>{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Tensor<T>& value(Var<T> v) { return nodes_.at(v.idx).value; }
  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.idx).value; }

  bool requires_grad(Var<T> v) const { return nodes_.at(v.idx).requires_grad; }

  bool has_grad(Var<T> v) const { return !nodes_.at(v.idx).grad.empty(); }

  const std::vector<T>& grad(Var<T> v) const {
    const Node& n = nodes_.at(v.idx);
    if (n.grad.empty()) throw ValueError("Tape::grad: no gradient recorded for this node");
    return n.grad;
  }

  // Gradient accumulation buffer, zero-initialized on first touch.
  std::vector<T>& grad_buffer(std::uint32_t idx) {
    Node& n = nodes_.at(idx);
    if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
    return n.grad;
  }

  // Seeds the root gradient and sweeps the tape in reverse creation order.
  // With release_intermediates, each non-leaf gradient buffer is freed as
  // soon as its node's backward has run (it can no longer be read), which
  // keeps the peak footprint near the live frontier.
  void backward(Var<T> root, std::vector<T> seed = {}, bool release_intermediates = false) {
    Node& r = nodes_.at(root.idx);
    if (seed.empty()) {
      if (r.value.numel() != 1)
        throw ShapeError("Tape::backward: default seed requires a scalar root");
      seed.assign(1, T(1));
    }
    if (seed.size() != r.value.numel())
      throw ShapeError("Tape::backward: seed size does not match root");
    grad_buffer(root.idx);
    r.grad = std::move(seed);
    for (std::uint32_t i = root.idx + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad.empty() && n.backward_fn) {
        n.backward_fn(*this, i);
        if (release_intermediates) std::vector<T>().swap(n.grad);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward_fn;
  };

  std::vector<Node> nodes_;
};

}  // namespace vscreen

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tsinet/tensor.hpp"

namespace tsinet {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  /// Gradient accumulated by Tape::backward. Throws if none was produced.
  const Tensor<T>& grad() const { return tape_->grad_of(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so reverse index order is a valid
/// topological order. Parameter leaves reference external storage and write
/// their gradients straight into a caller-owned accumulator, which is how
/// weights shared across time steps sum their contributions.
template <typename T>
class Tape {
 public:
  /// Called with the tape, this node's output gradient and its forward value.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, nullptr, false); }

  /// Owned leaf, e.g. an input under gradient check.
  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), nullptr, nullptr, requires_grad);
  }

  /// Non-owning leaf bound to a parameter; gradients accumulate into `grad_sink`.
  /// `grad_sink` may be null for inference-only binding.
  Var<T> parameter(const Tensor<T>& value, Tensor<T>* grad_sink) {
    if (grad_sink && grad_sink->shape() != value.shape()) {
      throw ShapeError("parameter gradient buffer " + to_string(grad_sink->shape()) +
                       " does not match value " + to_string(value.shape()));
    }
    Node node;
    node.external = &value;
    node.grad_sink = grad_sink;
    node.requires_grad = grad_sink != nullptr;
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Records an op output. `fn` is dropped if no input requires a gradient.
  template <typename... Vars>
  Var<T> record(Tensor<T> value, BackwardFn fn, const Vars&... inputs) {
    const bool needs = (false || ... || inputs.requires_grad());
    return push(std::move(value), needs ? std::move(fn) : BackwardFn{}, nullptr, needs);
  }

  Var<T> record_many(Tensor<T> value, BackwardFn fn, const std::vector<Var<T>>& inputs) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || v.requires_grad();
    return push(std::move(value), needs ? std::move(fn) : BackwardFn{}, nullptr, needs);
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator for node `id`, zero-initialized on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad_sink) return *n.grad_sink;
    if (n.grad.empty() && !value(id).empty()) n.grad = Tensor<T>::zeros(value(id).shape());
    return n.grad;
  }

  const Tensor<T>& grad_of(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad_sink) return *n.grad_sink;
    if (n.grad.empty()) throw std::logic_error("no gradient recorded for tape node " + std::to_string(id));
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

  /// Reverse sweep from a scalar loss. A tape supports a single sweep.
  void backward(const Var<T>& loss) {
    if (backward_done_) throw std::logic_error("backward already ran on this tape; record a new one");
    if (&loss.tape() != this) throw std::invalid_argument("loss belongs to another tape");
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    backward_done_ = true;
    if (!requires_grad(loss.id())) return;
    grad(loss.id())[0] += T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad, value(i));
      // Interior gradients are released once propagated; leaves keep theirs.
      n.backward = nullptr;
      n.grad = Tensor<T>{};
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* grad_sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, BackwardFn fn, Tensor<T>* sink, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.grad_sink = sink;
    node.requires_grad = requires_grad;
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque keeps references to earlier nodes valid while recording
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace tsinet

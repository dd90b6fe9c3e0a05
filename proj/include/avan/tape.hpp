#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape records every operation as it is evaluated (define-by-run), so the
// node list is always in topological order. backward() walks it in reverse.

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avan/tensor.hpp"

namespace avan {

/// A named trainable tensor plus its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T{0});
  }
};

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return tape->value(*this).shape(); }
};

/// Forward-pass behaviour shared by every op recorded on a tape.
struct ForwardMode {
  bool training = false;
  /// Batch-norm layers fold batch statistics into their running estimates.
  /// Disabled for finite-difference probes so they do not perturb the model.
  bool update_running_stats = true;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(ForwardMode mode = {}) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const ForwardMode& mode() const { return mode_; }
  bool training() const { return mode_.training; }

  Var<T> constant(Tensor<T> value, std::string op = "constant") {
    return push(std::move(op), std::move(value), false, nullptr, {});
  }

  /// Leaf whose gradient is kept on the tape (readable via grad()).
  Var<T> input(Tensor<T> value, bool requires_grad = true) {
    return push("input", std::move(value), requires_grad, nullptr, {});
  }

  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var<T> param(Param<T>& p) {
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    return push("param:" + p.name, p.value, true, &p, {});
  }

  /// Records an op result. The backward closure receives the output gradient
  /// and is only invoked when some input needs a gradient.
  Var<T> record(std::string op, Tensor<T> value, std::vector<std::size_t> inputs,
                BackwardFn backward) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_[i].needs_grad;
    return push(std::move(op), std::move(value), needs, nullptr, std::move(inputs),
                needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const std::string& op_name(Var<T> v) const { return nodes_.at(v.id).op; }
  bool needs_grad(Var<T> v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  const Tensor<T>& grad(Var<T> v) { return grad_buffer(v.id); }

  /// Gradient buffer of an input, or nullptr when it needs none.
  Tensor<T>* grad_if_needed(std::size_t id) {
    return nodes_[id].needs_grad ? &grad_buffer(id) : nullptr;
  }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    if (!nodes_[id].needs_grad) return;
    Tensor<T>& dst = grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  /// Reverse sweep from a scalar loss. Parameter gradients are added to
  /// Param::grad (call zero_grad() between steps).
  void backward(Var<T> loss) {
    if (value(loss).size() != 1)
      throw ShapeError("backward", Shape{1}, value(loss).shape());
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Tensor<T>(n.value.shape());
    grad_buffer(loss.id)[0] = T{1};
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.needs_grad) continue;
      if (n.param) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
      } else if (n.backward) {
        n.backward(*this, n.grad);
      }
    }
  }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Param<T>* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var<T> push(std::string op, Tensor<T> value, bool needs, Param<T>* p,
              std::vector<std::size_t> inputs, BackwardFn backward = {}) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.needs_grad = needs;
    n.param = p;
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  ForwardMode mode_;
  std::deque<Node> nodes_;
};

}  // namespace avan

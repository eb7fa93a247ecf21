#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vlt/errors.hpp"
#include "vlt/tensor.hpp"

namespace vlt {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

namespace testing_hooks {
// Name of an op whose backward receives a perturbed upstream gradient. Used to
// prove that the gradient checker detects a broken backward. Empty = off.
inline std::string& corrupt_backward_op() {
  static std::string op;
  return op;
}
}  // namespace testing_hooks

/// Reverse-mode tape. Nodes are appended in evaluation order, so every input id
/// precedes its consumer and the graph is acyclic by construction.
class Tape {
 public:
  // Receives the node's upstream gradient; accumulates into its inputs via
  // Tape::accumulate / Tape::grad_buffer.
  using BackwardFn = std::function<void(Tape&, const Tensor& upstream)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true, std::string name = "leaf") {
    Node n;
    n.op = std::move(name);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false, "const"); }

  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw ContractError("op '" + n.op + "' mixes variables from different tapes");
      n.inputs.push_back(v.id());
      n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    n.value = std::move(value);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient of the last backward() target w.r.t. node `id`; zeros if the node
  // did not receive any gradient.
  const Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Tensor::zeros_like(n.value);
      n.has_grad = true;
    }
    return n.grad;
  }

  // Mutable gradient buffer for accumulation from backward functions. Returns
  // nullptr when the node does not need a gradient.
  Tensor* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor::zeros_like(n.value);
      n.has_grad = true;
    }
    return &n.grad;
  }

  void accumulate(std::size_t id, const Tensor& g) {
    Tensor* buf = grad_buffer(id);
    if (!buf) return;
    auto dst = buf->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  std::size_t input(std::size_t node, std::size_t k) const { return nodes_[node].inputs[k]; }

  /// Piecewise ops (ReLU, |.|) report which side of each kink they evaluated;
  /// two forward passes with equal signatures ran on the same smooth piece.
  void note_branch(bool side) {
    branch_signature_ = (branch_signature_ ^ (side ? 0x9eULL : 0x37ULL)) * 0x100000001b3ULL;
  }
  std::uint64_t branch_signature() const { return branch_signature_; }

  /// Seeds d(out)/d(out) = 1 and visits every node at or before `out` exactly
  /// once, in reverse order.
  void backward(Var out) {
    const Node& o = nodes_.at(out.id());
    if (o.value.numel() != 1) {
      throw ContractError("backward() needs a scalar output, got shape " + shape_str(o.value.shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    Tensor* seed = grad_buffer(out.id());
    if (!seed) return;
    (*seed)[0] = 1.0;
    const std::string& corrupt = testing_hooks::corrupt_backward_op();
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.has_grad || !n.backward) continue;
      if (!corrupt.empty() && n.op == corrupt) {
        Tensor g = n.grad;
        for (double& v : g.vec()) v *= 1.25;
        n.backward(*this, g);
      } else {
        // Consumers precede this node in the reverse sweep, so its gradient is final.
        Tensor g = std::move(n.grad);
        n.backward(*this, g);
        nodes_[i].grad = std::move(g);
      }
    }
  }

 private:
  std::vector<Node> nodes_;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

}  // namespace vlt

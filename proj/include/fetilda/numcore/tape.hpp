#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "fetilda/numcore/tensor.hpp"

namespace fetilda {

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool has_grad = false;

  void zero_grad() {
    grad.fill(0.0);
    has_grad = false;
  }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient record.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a reverse sweep over the node list is a reverse topological order.
/// With grad mode off, values are still recorded but no backward closures are
/// kept.
class Tape {
 public:
  /// Receives the tape and the id of the node whose output gradient is ready.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// Leaf bound to a parameter; after backward its gradient is added to `param.grad`.
  Var param(Parameter& param);
  /// Records an op result. `backward` is dropped when no input needs a gradient.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  /// Records an op that reads parameters directly instead of through input
  /// nodes (e.g. an embedding gather); its closure writes into the parameters.
  Var push_source(Tensor value, bool needs_grad, BackwardFn backward);

  /// Reverse sweep from a one-element loss. Node gradients are reset first;
  /// parameter gradients accumulate across calls.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? n.param->value : n.value;
  }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of an input node, or nullptr when it needs none.
  Tensor* grad_for(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    // Parameter leaves read their value from the parameter without copying.
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

}  // namespace fetilda

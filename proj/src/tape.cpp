#include "fetilda/numcore/tape.hpp"

#include <stdexcept>

namespace fetilda {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  const bool needs = grad_enabled_ && p.trainable;
  nodes_.push_back(Node{Tensor(), {}, {}, nullptr, &p, needs});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push_source(Tensor value, bool needs_grad, BackwardFn backward) {
  const bool needs = grad_enabled_ && needs_grad;
  Node node{std::move(value), {}, {}, nullptr, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (auto id : inputs) needs = needs || nodes_[id].needs_grad;
  }
  Node node{std::move(value), {}, std::move(inputs), nullptr, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_for(std::size_t id) {
  Node& n = nodes_[id];
  return n.needs_grad ? &n.grad : nullptr;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const std::size_t root = loss.id();
  if (value(root).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(value(root).shape()));
  }
  if (!grad_enabled_) throw std::logic_error("backward on a tape recorded without grad mode");

  for (std::size_t i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) {
      n.grad = Tensor(value(i).shape(), 0.0);
    } else {
      n.grad = Tensor();
    }
  }
  if (!nodes_[root].needs_grad) return;
  nodes_[root].grad[0] = 1.0;

  // Only nodes on a path to the loss run their closures or touch parameters.
  std::vector<char> reached(root + 1, 0);
  reached[root] = 1;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !reached[i]) continue;
    for (auto in : n.inputs) reached[in] = 1;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr && n.needs_grad) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      n.param->has_grad = true;
    }
  }
}

}  // namespace fetilda

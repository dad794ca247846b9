#include "rit/numerics/tape.hpp"

#include "rit/error.hpp"

namespace rit::nn {

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = push(p.value, record_, nullptr);
  if (record_) nodes_[v.id_].param = &p;
  return v;
}

Var Tape::push(Tensor value, bool requires_grad, Backprop fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_ && requires_grad;
  if (node.requires_grad) node.backprop = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(const Var& loss) {
  RIT_EXPECT(loss.tape_ == this, ContractError, "backward: loss recorded on a different tape");
  RIT_EXPECT(loss.value().size() == 1, ContractError,
             "backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  if (!nodes_[loss.id_].requires_grad) {
    clear();
    return;
  }
  grad(loss.id_)[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.shape() != node.value.shape()) continue;
    if (node.backprop) {
      // Callbacks only touch adjoints of earlier nodes; `node` stays put.
      node.backprop(*this, node.grad, node.value);
    }
    if (node.param) {
      Tensor& target = node.param->grad;
      if (target.shape() != node.value.shape()) target = Tensor(node.value.shape());
      for (std::size_t k = 0; k < target.size(); ++k) target[k] += node.grad[k];
    }
  }
  clear();
}

}  // namespace rit::nn

#include "relpose/autodiff.hpp"

#include "relpose/errors.hpp"

namespace relpose {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (&p.tape() != this) {
      throw ContractError("op mixes variables from different tapes");
    }
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  // Nodes never reached by backward report a zero gradient.
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

Tensor& Tape::ensure_grad(Node& node) {
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::zero_grad() {
  for (Node& node : nodes_) {
    if (node.has_grad) node.grad.fill(0.0);
  }
  dirty_ = false;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) {
    throw ContractError("backward called with a variable from another tape");
  }
  const std::size_t root = loss.id();
  if (nodes_[root].value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(nodes_[root].value.shape()));
  }
  if (dirty_ && !accumulate_) {
    throw ContractError(
        "backward called twice without zero_grad while accumulation is off");
  }
  // Interior gradients restart from zero; leaves keep what they hold.
  for (std::size_t id = 0; id <= root; ++id) {
    Node& node = nodes_[id];
    if (!node.is_leaf && node.has_grad) node.grad.fill(0.0);
  }
  ensure_grad(nodes_[root]).data()[0] += 1.0;

  for (std::size_t id = root + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || !node.has_grad) continue;
    BackwardContext ctx{node.value, node.grad, {}, {}};
    ctx.in_values.reserve(node.parents.size());
    ctx.in_grads.reserve(node.parents.size());
    for (std::size_t pid : node.parents) {
      Node& parent = nodes_[pid];
      ctx.in_values.push_back(&parent.value);
      ctx.in_grads.push_back(parent.requires_grad ? &ensure_grad(parent)
                                                  : nullptr);
    }
    node.backward(ctx);
  }
  dirty_ = true;
}

}  // namespace relpose

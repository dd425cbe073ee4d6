#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "relpose/tensor.hpp"

namespace relpose {

class Tape;

/// Handle to one node of a Tape. Cheap to copy; only valid while its tape
/// is alive.
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
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Inputs handed to a node's backward function. `in_grads[k]` is null when
/// parent k does not need a gradient.
struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents
/// always precede children and backward is a single reverse sweep.
///
/// Leaf gradients accumulate across backward() calls until zero_grad().
/// Interior gradients are recomputed on every sweep. With accumulation
/// disabled a second backward() without zero_grad() raises ContractError.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op node. The backward function is dropped when no parent
  // requires a gradient.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  void backward(const Var& loss);
  void zero_grad();
  void set_accumulate(bool accumulate) { accumulate_ = accumulate; }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    mutable bool has_grad = false;
  };

  Tensor& ensure_grad(Node& node);

  // Deque keeps node addresses stable, so values stay referencable while
  // later ops are recorded.
  std::deque<Node> nodes_;
  bool accumulate_ = true;
  bool dirty_ = false;
};

}  // namespace relpose

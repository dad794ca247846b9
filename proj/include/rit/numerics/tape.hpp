#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rit/numerics/tensor.hpp"

namespace rit::nn {

/// Trainable leaf. Gradients from Tape::backward accumulate into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_) : name(std::move(name_)), value(std::move(value_)) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape. Invalidated by Tape::clear() and
/// by Tape::backward().
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, which
/// is a topological order, so backward is a single reverse sweep.
class Tape {
 public:
  /// Receives the adjoint and value of the node's output and accumulates
  /// into the adjoints of its inputs through Tape::grad().
  using Backprop = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  /// Leaf bound to a parameter. Requires grad only while recording.
  Var param(Parameter& p);

  /// Appends an op result. `fn` is dropped when not recording or when no
  /// input requires grad.
  Var push(Tensor value, bool requires_grad, Backprop fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adjoint of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);

  /// Seeds d(loss)/d(loss)=1, sweeps the tape once in reverse, adds leaf
  /// adjoints into the bound Parameter::grad tensors, then clears the tape.
  void backward(const Var& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  /// Kink bookkeeping for gradient checks. When enabled, non-smooth ops
  /// (relu, max, clamps, abs) fold which side of each kink they evaluated
  /// into a running signature; two evaluations with equal signatures lie in
  /// the same smooth piece.
  void set_branch_tracking(bool on) { track_branches_ = on; }
  bool branch_tracking() const { return track_branches_; }
  void note_branch(std::uint64_t v) { signature_ = (signature_ ^ (v + 0x9e3779b97f4a7c15ull)) * 1099511628211ull; }
  std::uint64_t branch_signature() const { return signature_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backprop backprop;
  };

  bool record_;
  bool track_branches_ = false;
  std::uint64_t signature_ = 0;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace rit::nn

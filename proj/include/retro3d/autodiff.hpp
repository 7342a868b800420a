#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "retro3d/tensor.hpp"

namespace retro3d {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient buffers of one node's inputs, handed to its backward rule.
/// Slot k refers to the k-th input; buffers are zero-filled on first access.
class GradAccumulator {
 public:
  bool wants(std::size_t slot) const;
  std::span<double> operator[](std::size_t slot);

 private:
  friend class Tape;
  GradAccumulator(const Tape& tape, std::vector<std::vector<double>>& grads,
                  const std::vector<std::size_t>& inputs)
      : tape_(tape), grads_(grads), inputs_(inputs) {}

  const Tape& tape_;
  std::vector<std::vector<double>>& grads_;
  const std::vector<std::size_t>& inputs_;
};

using BackwardRule = std::function<void(std::span<const double> grad_out, GradAccumulator& acc)>;

class Gradients {
 public:
  /// Gradient of the loss w.r.t. `v`; all zeros when `v` did not reach the loss.
  const Tensor& operator[](const Var& v) const { return grads_.at(v.id()); }

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

/// Ordered record of operations. Inputs are always recorded before the nodes that
/// consume them, so reverse insertion order is a valid topological order.
/// A tape belongs to one thread.
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input: receives a gradient from backward().
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);
  /// Appends an op result. The rule is dropped when no input needs a gradient or
  /// the tape is not recording.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardRule rule);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Does not mutate the tape, so repeated calls
  /// return identical gradients.
  Gradients backward(const Var& loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  bool record_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace retro3d

#include "retro3d/autodiff.hpp"

#include <cmath>

namespace retro3d {

bool GradAccumulator::wants(std::size_t slot) const {
  return tape_.requires_grad(inputs_.at(slot));
}

std::span<double> GradAccumulator::operator[](std::size_t slot) {
  std::size_t id = inputs_.at(slot);
  auto& buf = grads_[id];
  if (buf.empty()) buf.assign(tape_.value(id).size(), 0.0);
  return buf;
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardRule rule) {
  Node node{std::move(value), {}, {}, false};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("op mixes Vars from different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  node.requires_grad = node.requires_grad && record_;
  if (node.requires_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw std::logic_error("loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  if (nodes_[loss.id()].requires_grad) grads[loss.id()] = {1.0};

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads[id].empty() || !node.rule) continue;
    GradAccumulator acc(*this, grads, node.inputs);
    node.rule(grads[id], acc);
  }

  Gradients out;
  out.grads_.reserve(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (grads[id].empty()) {
      out.grads_.push_back(Tensor::zeros(nodes_[id].value.shape()));
    } else {
      out.grads_.emplace_back(nodes_[id].value.shape(), std::move(grads[id]));
    }
  }
  return out;
}

}  // namespace retro3d

/* Copyright 2026 The kneedg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "kneedg/autodiff.hpp"

#include "kneedg/error.hpp"

namespace kneedg {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

Var Tape::leaf(Tensor& param) {
  Node node;
  node.value = param;
  node.needs_grad = record_grad_ && param.grad_enabled();
  node.param = node.needs_grad ? &param : nullptr;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  if (record_grad_) {
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw ContractError("Var recorded on a different tape");
      node.needs_grad = node.needs_grad || nodes_[in.id_].needs_grad;
    }
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& node = nodes_[v.id_];
  if (node.grad.empty()) node.grad.assign(node.value.numel(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("loss belongs to a different tape");
  if (nodes_[loss.id_].value.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(nodes_[loss.id_].value.shape()));
  for (Node& node : nodes_) node.grad.clear();
  backward_calls_ = 0;
  if (!nodes_[loss.id_].needs_grad) return;
  grad_buffer(loss)[0] = 1.0;

  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.needs_grad) continue;
    if (node.backward) {
      // Callbacks only touch input buffers; nodes_ never grows during the sweep.
      node.backward(*this, node.grad);
      ++backward_calls_;
    } else if (node.param) {
      auto g = node.param->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += node.grad[k];
    }
  }
}

}  // namespace kneedg

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

#ifndef KNEEDG_AUTODIFF_HPP_
#define KNEEDG_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "kneedg/tensor.hpp"

namespace kneedg {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape that produced it is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in execution order (so entries are topologically sorted)
// and replays them in reverse to accumulate gradients.
class Tape {
 public:
  // Called with the gradient of the entry's output; adds into input gradients
  // obtained through Tape::grad_buffer.
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  // A tape constructed with record_grad = false keeps values only. Ops skip
  // all backward bookkeeping, which is what inference wants.
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf bound to a parameter; backward() adds d(loss)/d(param) into
  // param.grad() when the parameter has grad enabled.
  Var leaf(Tensor& param);
  Var constant(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }
  bool recording() const { return record_grad_; }

  // Mutable gradient accumulator for v, zero-initialized on first use.
  std::span<double> grad_buffer(Var v);
  // Gradient of v from the last backward(); empty when nothing reached v.
  std::span<const double> grad(Var v) const { return nodes_[v.id_].grad; }

  // Reverse sweep from a scalar loss. Throws ContractError when the loss has
  // more than one element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  // Number of entries whose backward function ran during the last sweep.
  std::size_t backward_calls() const { return backward_calls_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };

  bool record_grad_;
  std::vector<Node> nodes_;
  std::size_t backward_calls_ = 0;
};

}  // namespace kneedg

#endif  // KNEEDG_AUTODIFF_HPP_

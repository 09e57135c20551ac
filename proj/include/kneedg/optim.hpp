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

#ifndef KNEEDG_OPTIM_HPP_
#define KNEEDG_OPTIM_HPP_

#include <vector>

#include "kneedg/tensor.hpp"

namespace kneedg {

// Heavy-ball SGD: v <- momentum * v + g; p <- p - lr * v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum);

  // Applies one update using each parameter's accumulated grad(). Velocity
  // buffers are created on the first call and keyed by position.
  void step(const std::vector<Tensor*>& params);

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

void zero_grads(const std::vector<Tensor*>& params);

}  // namespace kneedg

#endif  // KNEEDG_OPTIM_HPP_

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

#ifndef KNEEDG_GRADCHECK_HPP_
#define KNEEDG_GRADCHECK_HPP_

#include <functional>

#include "kneedg/tensor.hpp"

namespace kneedg {

// Central-difference estimate (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step = 1e-3);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
// whose true gradient is ~0 from dominating through round-off.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6);

}  // namespace kneedg

#endif  // KNEEDG_GRADCHECK_HPP_

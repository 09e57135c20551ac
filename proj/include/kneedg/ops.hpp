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

#ifndef KNEEDG_OPS_HPP_
#define KNEEDG_OPS_HPP_

#include <array>
#include <cstddef>

#include "kneedg/autodiff.hpp"
#include "kneedg/tensor.hpp"

namespace kneedg {

using Triple = std::array<std::size_t, 3>;

struct Conv3dParams {
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

// Running statistics owned by a batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;

  explicit BatchNormState(std::size_t channels = 1, double momentum_ = 0.1)
      : running_mean({channels}, 0.0), running_var({channels}, 1.0), momentum(momentum_) {}
};

// floor((in + 2 * pad - kernel) / stride) + 1; throws DimensionError when the
// kernel does not fit the padded extent.
std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// 3D cross-correlation. input [N,Cin,D,H,W], weight [Cout,Cin,kd,kh,kw], bias [Cout].
Var conv3d(Var input, Var weight, Var bias, const Conv3dParams& params);
// Max over windows; ties route the gradient to the first element in raster order.
Var maxpool3d(Var input, Triple window, Triple stride);
Var relu(Var input);
// Per-channel normalization over (N, D, H, W). Training mode uses batch
// statistics and updates `state`; inference mode reads `state`.
Var batch_norm(Var input, Var gamma, Var beta, double eps, bool training, BatchNormState& state);
// Per-sample, per-channel normalization over (D, H, W).
Var instance_norm(Var input, Var gamma, Var beta, double eps);
// [N,C,D,H,W] -> [N,C]
Var global_avg_pool(Var input);
// input [N,F], weight [O,F], bias [O] -> [N,O]
Var linear(Var input, Var weight, Var bias);
// Row-wise softmax of [N,K].
Var softmax(Var input);
// Row-wise x / max(||x||, eps) of [N,F].
Var l2_normalize_rows(Var input, double eps = 1e-12);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);

namespace kernels {

// Tape-free forward passes for code that never differentiates (GIN networks).
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv3dParams& params);
void leaky_relu_inplace(Tensor& t, double slope);
Tensor softmax_rows(const Tensor& logits);

}  // namespace kernels

}  // namespace kneedg

#endif  // KNEEDG_OPS_HPP_

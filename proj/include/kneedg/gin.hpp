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

#ifndef KNEEDG_GIN_HPP_
#define KNEEDG_GIN_HPP_

#include <cstddef>
#include <vector>

#include "kneedg/ops.hpp"
#include "kneedg/rng.hpp"
#include "kneedg/tensor.hpp"

namespace kneedg {

// Global intensity non-linear augmentation: a volume is passed through a
// freshly drawn, never-trained shallow conv net and blended with the original.
struct GinConfig {
  std::size_t n_layers = 2;
  std::size_t hidden_channels = 2;
  std::size_t kernel = 3;
  double leaky_slope = 0.2;
  double bias_std = 0.5;
  bool renormalize = true;
  std::size_t views_per_image = 5;

  void validate() const;
};

struct GinLayer {
  Tensor weight;  // [Cout, Cin, k, k, k]
  Tensor bias;    // [Cout]
};

class GinNetwork {
 public:
  GinNetwork(std::vector<GinLayer> layers, double leaky_slope, std::size_t kernel);

  // x is [C, D, H, W]; the output has the same shape. Leaky ReLU follows
  // every layer but the last.
  Tensor apply(const Tensor& x) const;
  const std::vector<GinLayer>& layers() const { return layers_; }

 private:
  std::vector<GinLayer> layers_;
  double slope_;
  Conv3dParams params_;
};

// Weights ~ N(0, 1/fan_in), biases ~ N(0, bias_std^2); maps C -> hidden -> ... -> C.
GinNetwork sample_gin(RngStream& rng, const GinConfig& config, std::size_t channels = 1);

// alpha * rescale(g(x)) + (1 - alpha) * x. With renormalize on, g(x) is
// shifted and scaled to x's mean and standard deviation; if g(x) is constant
// only the mean is matched.
Tensor augment(const Tensor& x, const GinNetwork& g, double alpha, const GinConfig& config);

struct GinView {
  Tensor volume;
  double alpha;
};

// views_per_image independent (network, alpha ~ U(0,1)) draws. `rng` should
// be derived per image so the result is a function of (seed, image id).
std::vector<GinView> augment_views(const Tensor& x, RngStream rng, const GinConfig& config);

// Number of GIN views produced since process start; lets tests assert that a
// configuration never touched the augmentation path.
std::size_t gin_invocations();

}  // namespace kneedg

#endif  // KNEEDG_GIN_HPP_

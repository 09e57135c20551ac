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

#include "kneedg/gin.hpp"

#include <atomic>
#include <cmath>

#include "kneedg/error.hpp"

namespace kneedg {

namespace {

std::atomic<std::size_t> g_invocations{0};

void moments(const Tensor& t, double& mean, double& sd) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  mean = s / static_cast<double>(t.numel());
  double q = 0.0;
  for (double v : t.values()) q += (v - mean) * (v - mean);
  sd = std::sqrt(q / static_cast<double>(t.numel()));
}

}  // namespace

void GinConfig::validate() const {
  if (n_layers < 1) throw ConfigError("must be >= 1", "gin.n_layers");
  if (hidden_channels < 1) throw ConfigError("must be >= 1", "gin.hidden_channels");
  if (kernel % 2 == 0) throw ConfigError("must be odd so padding preserves shape", "gin.kernel");
  if (!(leaky_slope >= 0.0)) throw ConfigError("must be >= 0", "gin.leaky_slope");
  if (!(bias_std >= 0.0)) throw ConfigError("must be >= 0", "gin.bias_std");
  if (views_per_image < 1) throw ConfigError("must be >= 1", "gin.views_per_image");
}

GinNetwork::GinNetwork(std::vector<GinLayer> layers, double leaky_slope, std::size_t kernel)
    : layers_(std::move(layers)), slope_(leaky_slope) {
  params_.padding = {kernel / 2, kernel / 2, kernel / 2};
}

Tensor GinNetwork::apply(const Tensor& x) const {
  if (x.rank() != 4) throw DimensionError("GIN input must be [C,D,H,W], got " + shape_str(x.shape()));
  Tensor h = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = kernels::conv3d(h, layers_[i].weight, layers_[i].bias, params_);
    if (i + 1 < layers_.size()) kernels::leaky_relu_inplace(h, slope_);
  }
  return h.reshaped(x.shape());
}

GinNetwork sample_gin(RngStream& rng, const GinConfig& config, std::size_t channels) {
  config.validate();
  std::vector<GinLayer> layers;
  const std::size_t k = config.kernel;
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const std::size_t cin = i == 0 ? channels : config.hidden_channels;
    const std::size_t cout = i + 1 == config.n_layers ? channels : config.hidden_channels;
    GinLayer layer{Tensor({cout, cin, k, k, k}), Tensor({cout})};
    const double std = 1.0 / std::sqrt(static_cast<double>(cin * k * k * k));
    for (double& v : layer.weight.values()) v = rng.normal(0.0, std);
    for (double& v : layer.bias.values()) v = rng.normal(0.0, config.bias_std);
    layers.push_back(std::move(layer));
  }
  return GinNetwork(std::move(layers), config.leaky_slope, k);
}

Tensor augment(const Tensor& x, const GinNetwork& g, double alpha, const GinConfig& config) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in [0, 1]");
  if (!x.all_finite()) throw ContractError("GIN input must be finite");
  Tensor y = g.apply(x);
  if (config.renormalize) {
    double mx, sx, my, sy;
    moments(x, mx, sx);
    moments(y, my, sy);
    // A constant g(x) carries no contrast to rescale; match the mean only.
    const double gain = sy > 0.0 ? sx / sy : 0.0;
    for (double& v : y.values()) v = (v - my) * gain + mx;
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = alpha * y[i] + (1.0 - alpha) * x[i];
  return out;
}

std::vector<GinView> augment_views(const Tensor& x, RngStream rng, const GinConfig& config) {
  config.validate();
  std::vector<GinView> views;
  views.reserve(config.views_per_image);
  for (std::size_t v = 0; v < config.views_per_image; ++v) {
    RngStream vr = rng.derive(v);
    GinNetwork g = sample_gin(vr, config, x.dim(0));
    const double alpha = vr.uniform();
    views.push_back({augment(x, g, alpha, config), alpha});
    g_invocations.fetch_add(1, std::memory_order_relaxed);
  }
  return views;
}

std::size_t gin_invocations() { return g_invocations.load(std::memory_order_relaxed); }

}  // namespace kneedg

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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "kneedg/error.hpp"
#include "kneedg/gin.hpp"
#include "oracles.hpp"

using namespace kneedg;

namespace {

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.numel());
}

double std_of(const Tensor& t) {
  const double m = mean_of(t);
  double s = 0.0;
  for (double v : t.values()) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(t.numel()));
}

// Asymptotic Kolmogorov survival function with the Stephens small-sample
// correction: P(D_n > d) ~= Q((sqrt(n) + 0.12 + 0.11 / sqrt(n)) * d).
double ks_p_value(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double q = 0.0;
  for (int j = 1; j <= 100; ++j) q += 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

}  // namespace

TEST_CASE("gin config validation") {
  GinConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  GinConfig k;
  k.kernel = 2;
  CHECK_THROWS_AS(k.validate(), ConfigError);
}

TEST_CASE("sample_gin is a deterministic function of the stream") {
  const GinConfig cfg;
  RngStream a = RngStream(4, "gin").derive(7), b = RngStream(4, "gin").derive(7), c = RngStream(4, "gin").derive(8);
  const GinNetwork ga = sample_gin(a, cfg), gb = sample_gin(b, cfg), gc = sample_gin(c, cfg);
  REQUIRE(ga.layers().size() == cfg.n_layers);
  CHECK(ga.layers().front().weight.shape() == Shape{2, 1, 3, 3, 3});
  CHECK(ga.layers().back().weight.shape() == Shape{1, 2, 3, 3, 3});
  bool differs = false;
  for (std::size_t l = 0; l < ga.layers().size(); ++l) {
    CHECK(ga.layers()[l].weight.values() == gb.layers()[l].weight.values());
    CHECK(ga.layers()[l].bias.values() == gb.layers()[l].bias.values());
    differs = differs || ga.layers()[l].weight.values() != gc.layers()[l].weight.values();
  }
  CHECK(differs);
}

TEST_CASE("augment examples") {
  RngStream rng(9, "aug");
  const GinConfig cfg;
  const Tensor x = oracle::random_tensor({1, 6, 5, 4}, rng);
  for (int trial = 0; trial < 10; ++trial) {
    RngStream gr = rng.derive(static_cast<std::uint64_t>(trial));
    const GinNetwork g = sample_gin(gr, cfg);
    CHECK(augment(x, g, 0.0, cfg).values() == x.values());
    const Tensor full = augment(x, g, 1.0, cfg);
    CHECK(full.shape() == x.shape());
    CHECK(std::fabs(mean_of(full) - mean_of(x)) < 1e-9);
    CHECK(std::fabs(std_of(full) - std_of(x)) < 1e-9);
    const Tensor half = augment(x, g, 0.5, cfg);
    CHECK(std::fabs(mean_of(half) - mean_of(x)) < 1e-6);

    const Tensor flat({1, 6, 5, 4}, 0.37);
    const Tensor c = augment(flat, g, 0.5, cfg);
    CHECK(c.all_finite());
    CHECK(std::fabs(mean_of(c) - 0.37) < 1e-9);
  }
  RngStream gr = rng.derive("g");
  const GinNetwork g = sample_gin(gr, cfg);
  CHECK_THROWS_AS(augment(x, g, 1.5, cfg), ContractError);
  CHECK_THROWS_AS(augment(x, g, -0.1, cfg), ContractError);
}

TEST_CASE("augment_views examples") {
  RngStream rng(10, "views");
  const Tensor x = oracle::random_tensor({1, 5, 6, 6}, rng);
  const GinConfig cfg;
  const std::vector<GinView> a = augment_views(x, RngStream(10, "img").derive(3), cfg);
  const std::vector<GinView> b = augment_views(x, RngStream(10, "img").derive(3), cfg);
  const std::vector<GinView> c = augment_views(x, RngStream(10, "img").derive(4), cfg);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].volume.shape() == x.shape());
    CHECK(a[i].volume.values() == b[i].volume.values());
    CHECK(a[i].alpha == b[i].alpha);
    CHECK(a[i].alpha != c[i].alpha);
    CHECK(std::fabs(mean_of(a[i].volume) - mean_of(x)) < 1e-6);
    // With both moments matched the view's spread cannot exceed the original's.
    CHECK(std::fabs(std_of(a[i].volume)) <= std_of(x) + 1e-9);
  }
  const std::size_t before = gin_invocations();
  GinConfig one = cfg;
  one.views_per_image = 1;
  CHECK(augment_views(x, RngStream(1, "x"), one).size() == 1);
  CHECK(gin_invocations() == before + 1);
}

TEST_CASE("alpha draws are uniform on [0, 1]") {
  GinConfig cfg;
  cfg.n_layers = 1;
  cfg.views_per_image = 5;
  const Tensor x = Tensor({1, 2, 2, 2}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
  std::vector<double> alphas;
  for (std::uint64_t img = 0; alphas.size() < 10000; ++img)
    for (const GinView& v : augment_views(x, RngStream(77, "ks").derive(img), cfg)) alphas.push_back(v.alpha);
  std::sort(alphas.begin(), alphas.end());
  const double n = static_cast<double>(alphas.size());
  double d = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    d = std::max(d, static_cast<double>(i + 1) / n - alphas[i]);
    d = std::max(d, alphas[i] - static_cast<double>(i) / n);
  }
  CHECK(alphas.front() >= 0.0);
  CHECK(alphas.back() <= 1.0);
  CHECK(ks_p_value(d, alphas.size()) > 0.01);
  // Oracle sanity: the critical distance at 0.01 is 1.628 / sqrt(n).
  CHECK(ks_p_value(1.628 / std::sqrt(n), alphas.size()) == doctest::Approx(0.01).epsilon(0.05));
}

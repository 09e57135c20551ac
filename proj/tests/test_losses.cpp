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

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "kneedg/error.hpp"
#include "kneedg/losses.hpp"
#include "oracles.hpp"

using namespace kneedg;

namespace {

double ce_value(const Tensor& logits, const std::vector<int>& labels) {
  Tape t(false);
  return cross_entropy(t.constant(logits), labels).value()[0];
}

double supcon_value(const Tensor& z, const std::vector<int>& labels, const std::vector<int>& ids, double tau) {
  Tape t(false);
  return supcon_loss(ViewBatch{t.constant(z), labels, ids}, tau).value()[0];
}

Tensor normalized_rows(const Shape& s, RngStream& rng) {
  Tensor z = oracle::random_tensor(s, rng, -1, 1);
  const std::size_t f = s[1];
  for (std::size_t r = 0; r < s[0]; ++r) {
    double n = 0.0;
    for (std::size_t k = 0; k < f; ++k) n += z[r * f + k] * z[r * f + k];
    for (std::size_t k = 0; k < f; ++k) z[r * f + k] /= std::sqrt(n);
  }
  return z;
}

}  // namespace

TEST_CASE("cross entropy examples") {
  CHECK(std::fabs(ce_value(Tensor({1, 2}, std::vector<double>{0, 0}), {0}) - std::log(2.0)) < 1e-9);
  const double tiny = ce_value(Tensor({1, 2}, std::vector<double>{10, -10}), {0});
  CHECK(std::fabs(tiny - std::log1p(std::exp(-20.0))) < 1e-6 * tiny);
  CHECK(tiny == doctest::Approx(2.06e-9).epsilon(0.01));
  CHECK(std::isfinite(ce_value(Tensor({1, 2}, std::vector<double>{1000, -1000}), {1})));
  CHECK_THROWS_AS(ce_value(Tensor({1, 2}, 0.0), {2}), ContractError);
  CHECK_THROWS_AS(ce_value(Tensor({1, 2}, 0.0), {-1}), ContractError);
  CHECK_THROWS(ce_value(Tensor({2, 2}, 0.0), {0}));

  RngStream rng(2, "ce");
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor l = oracle::random_tensor({4, 3}, rng, -3, 3);
    Tensor shifted = l;
    for (std::size_t r = 0; r < 4; ++r) {
      const double c = rng.uniform(-5, 5);
      for (std::size_t k = 0; k < 3; ++k) shifted[r * 3 + k] += c;
    }
    const std::vector<int> y{0, 2, 1, 1};
    CHECK(std::fabs(ce_value(shifted, y) - ce_value(l, y)) < 1e-12);
  }
}

TEST_CASE("cross entropy gradient") {
  RngStream rng(7, "ce.grad");
  double worst = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    const std::vector<int> labels{0, 1, 1, 0};
    worst = std::max(worst, oracle::grad_check_op([&](Tape&, Var v) { return cross_entropy(v, labels); },
                                                  oracle::random_tensor({4, 2}, rng, -3, 3), rng.derive(seed)));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("supcon examples") {
  const Tensor z({3, 2}, std::vector<double>{1, 0, 1, 0, 0, 1});
  CHECK(std::fabs(supcon_value(z, {0, 0, 1}, {0, 0, 1}, 1.0) - 0.313262) < 1e-6);
  CHECK(std::fabs(supcon_value(z, {0, 0, 1}, {0, 0, 1}, 1.0) - std::log1p(std::exp(-1.0))) < 1e-12);
  for (double tau : {0.05, 0.5, 3.0}) {
    const Tensor same({2, 2}, std::vector<double>{0.6, 0.8, 0.6, 0.8});
    CHECK(std::fabs(supcon_value(same, {1, 1}, {4, 4}, tau)) < 1e-12);
  }
  CHECK_THROWS_AS(supcon_value(z, {0, 1, 2}, {0, 1, 2}, 1.0), ContractError);
  CHECK_FALSE(has_positive_pair({0, 1, 2}));
  CHECK(has_positive_pair({0, 1, 0}));
}

TEST_CASE("supcon matches the direct formula and is permutation invariant") {
  RngStream rng(3, "supcon");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 3 + rng.below(10);
    const Tensor z = normalized_rows({m, 4}, rng);
    std::vector<int> labels(m), ids(m);
    for (std::size_t i = 0; i < m; ++i) {
      ids[i] = static_cast<int>(i / 2);
      labels[i] = static_cast<int>(rng.below(2));
    }
    for (std::size_t i = 1; i < m; i += 2) labels[i] = labels[i - 1];
    const double tau = rng.uniform(0.05, 2.0);
    const double v = supcon_value(z, labels, ids, tau);
    std::vector<std::vector<double>> rows(m, std::vector<double>(4));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < 4; ++k) rows[i][k] = z[i * 4 + k];
    CHECK(std::fabs(v - oracle::supcon_direct(rows, labels, tau)) < 1e-6);

    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor pz({m, 4});
    std::vector<int> pl(m), pi(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < 4; ++k) pz[i * 4 + k] = z[perm[i] * 4 + k];
      pl[i] = labels[perm[i]];
      pi[i] = ids[perm[i]];
    }
    CHECK(std::fabs(supcon_value(pz, pl, pi, tau) - v) < 1e-12);
  }
}

TEST_CASE("supcon decreases as a positive pair moves closer") {
  // Anchor (1, 0); negative fixed at (0, 1); positive rotates towards the anchor.
  double prev = INFINITY;
  for (int step = 0; step <= 10; ++step) {
    const double theta = M_PI / 2.0 * (1.0 - step / 10.0);
    const Tensor z({3, 2}, std::vector<double>{1, 0, std::cos(theta), std::sin(theta), 0, 1});
    const double v = supcon_value(z, {0, 0, 1}, {0, 0, 1}, 0.5);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("total loss composition") {
  RngStream rng(4, "total");
  const Tensor logits = oracle::random_tensor({4, 2}, rng, -2, 2);
  const Tensor z = normalized_rows({4, 3}, rng);
  const std::vector<int> labels{0, 0, 1, 1}, ids{0, 0, 1, 1};
  Tape t(false);
  Var lv = t.constant(logits);
  const ViewBatch vb{t.constant(z), labels, ids};
  const double ce = cross_entropy(lv, labels).value()[0];
  const double sc = supcon_loss(vb, 0.1).value()[0];

  const std::size_t before = contrastive_invocations();
  CHECK(total_loss(lv, labels, vb, LossConfig{0.0, 0.1}).value()[0] == ce);
  CHECK(contrastive_invocations() == before);
  CHECK(std::fabs(total_loss(lv, labels, vb, LossConfig{1.0, 0.1}).value()[0] - (ce + sc)) < 1e-12);
  CHECK(std::fabs(total_loss(lv, labels, vb, LossConfig{0.5, 0.1}).value()[0] - (ce + 0.5 * sc)) < 1e-12);
  CHECK_THROWS_AS(LossConfig({-0.1, 0.1}).validate(), ConfigError);
  CHECK_THROWS_AS(LossConfig({0.5, 0.0}).validate(), ConfigError);
}

TEST_CASE("prediction entropy") {
  CHECK(std::fabs(prediction_entropy(Tensor({1, 2}, std::vector<double>{0.5, 0.5})) - std::log(2.0)) < 1e-12);
  CHECK(prediction_entropy(Tensor({1, 2}, std::vector<double>{1, 0})) == 0.0);
  CHECK(std::fabs(prediction_entropy(Tensor({1, 2}, std::vector<double>{0.9, 0.1})) - 0.325083) < 1e-6);
  CHECK(std::fabs(prediction_entropy(Tensor({2, 2}, std::vector<double>{0.5, 0.5, 1, 0})) - std::log(2.0) / 2) <
        1e-12);
  CHECK_THROWS_AS(prediction_entropy(Tensor({1, 2}, std::vector<double>{1.1, -0.1})), ContractError);
  RngStream rng(5, "ent");
  for (int trial = 0; trial < 200; ++trial) {
    const double p = rng.uniform();
    const double h = prediction_entropy(Tensor({1, 2}, std::vector<double>{p, 1 - p}));
    CHECK(h >= 0.0);
    CHECK(h <= std::log(2.0) + 1e-15);
  }
}

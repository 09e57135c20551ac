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

#include "kneedg/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "kneedg/error.hpp"
#include "kneedg/ops.hpp"

namespace kneedg {

namespace {
std::atomic<std::size_t> g_supcon_calls{0};
}

std::size_t contrastive_invocations() { return g_supcon_calls.load(std::memory_order_relaxed); }

void LossConfig::validate() const {
  if (!(contrastive_weight >= 0.0)) throw ConfigError("must be >= 0", "contrastive_weight");
  if (!(temperature > 0.0)) throw ConfigError("must be > 0", "temperature");
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("cross_entropy expects [N,K] logits, got " + shape_str(z.shape()));
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy label count does not match logits rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data().data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    loss += lse - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(n);
  return logits.tape()->record(Tensor::scalar(loss), {logits},
                               [=, probs = std::move(probs)](Tape& t, std::span<const double> dy) {
                                 auto g = t.grad_buffer(logits);
                                 const double f = dy[0] / static_cast<double>(n);
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < k; ++j) {
                                     const double target = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
                                     g[i * k + j] += f * (probs[i * k + j] - target);
                                   }
                               });
}

bool has_positive_pair(const std::vector<int>& class_labels) {
  for (std::size_t i = 0; i < class_labels.size(); ++i)
    for (std::size_t j = i + 1; j < class_labels.size(); ++j)
      if (class_labels[i] == class_labels[j]) return true;
  return false;
}

Var supcon_loss(const ViewBatch& batch, double temperature) {
  const Tensor& z = batch.embeddings.value();
  if (z.rank() != 2) throw DimensionError("supcon_loss expects [M,F] embeddings");
  const std::size_t m = z.dim(0), f = z.dim(1);
  if (batch.class_labels.size() != m || batch.image_ids.size() != m)
    throw DimensionError("supcon_loss label/image-id counts must match embedding rows");
  if (m < 2) throw ContractError("supcon_loss needs at least two rows");
  if (!(temperature > 0.0)) throw ContractError("temperature must be > 0");
  const auto& y = batch.class_labels;
  g_supcon_calls.fetch_add(1, std::memory_order_relaxed);

  // Similarities scaled by 1/tau.
  std::vector<double> s(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < f; ++k) d += z[i * f + k] * z[j * f + k];
      s[i * m + j] = s[j * m + i] = d / temperature;
    }

  // dL/ds (w.r.t. the scaled similarity) accumulated per anchor.
  std::vector<double> ds(m * m, 0.0);
  double loss = 0.0;
  std::size_t anchors = 0;
  std::vector<double> soft(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t npos = 0;
    for (std::size_t p = 0; p < m; ++p)
      if (p != i && y[p] == y[i]) ++npos;
    if (npos == 0) continue;
    ++anchors;
    double mx = -INFINITY;
    for (std::size_t a = 0; a < m; ++a)
      if (a != i) mx = std::max(mx, s[i * m + a]);
    double denom = 0.0;
    for (std::size_t a = 0; a < m; ++a)
      if (a != i) denom += std::exp(s[i * m + a] - mx);
    const double log_denom = mx + std::log(denom);
    double li = 0.0;
    for (std::size_t p = 0; p < m; ++p)
      if (p != i && y[p] == y[i]) li += s[i * m + p] - log_denom;
    loss += -li / static_cast<double>(npos);
    for (std::size_t a = 0; a < m; ++a) {
      if (a == i) continue;
      const double pa = std::exp(s[i * m + a] - log_denom);
      const double is_pos = y[a] == y[i] ? 1.0 : 0.0;
      ds[i * m + a] = pa - is_pos / static_cast<double>(npos);
    }
  }
  if (anchors == 0) throw ContractError("degenerate contrastive batch: no anchor has a same-class positive");
  const double inv_anchors = 1.0 / static_cast<double>(anchors);
  loss *= inv_anchors;

  Var emb = batch.embeddings;
  return emb.tape()->record(Tensor::scalar(loss), {emb},
                            [=, ds = std::move(ds)](Tape& t, std::span<const double> dy) {
                              const Tensor& zv = t.value(emb);
                              auto g = t.grad_buffer(emb);
                              const double c = dy[0] * inv_anchors / temperature;
                              // d/dz_i of s_ij = z_i . z_j contributes through both (i,j) and (j,i).
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < m; ++j) {
                                  const double w = c * (ds[i * m + j] + ds[j * m + i]);
                                  if (w == 0.0) continue;
                                  for (std::size_t k = 0; k < f; ++k) g[i * f + k] += w * zv[j * f + k];
                                }
                            });
}

Var total_loss(Var logits, const std::vector<int>& labels, const ViewBatch& batch, const LossConfig& config) {
  config.validate();
  Var ce = cross_entropy(logits, labels);
  if (config.contrastive_weight == 0.0) return ce;
  return add(ce, scale(supcon_loss(batch, config.temperature), config.contrastive_weight));
}

double prediction_entropy(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("prediction_entropy expects [N,K] probabilities");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0, h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs[i * k + j];
      if (p < 0.0) throw ContractError("negative probability in prediction_entropy");
      row_sum += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(row_sum - 1.0) > 1e-6) throw ContractError("probability row does not sum to 1");
    total += h;
  }
  return total / static_cast<double>(n);
}

}  // namespace kneedg

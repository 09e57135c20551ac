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

#ifndef KNEEDG_LOSSES_HPP_
#define KNEEDG_LOSSES_HPP_

#include <vector>

#include "kneedg/autodiff.hpp"
#include "kneedg/tensor.hpp"

namespace kneedg {

struct LossConfig {
  double contrastive_weight = 0.5;  // lambda
  double temperature = 0.1;         // tau

  void validate() const;
};

// Embedding rows of one mini-batch plus the bookkeeping the supervised
// contrastive objective needs. Views of one image share image_id and label.
struct ViewBatch {
  Var embeddings;  // [M, F], rows L2-normalized
  std::vector<int> class_labels;
  std::vector<int> image_ids;
};

// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
Var cross_entropy(Var logits, const std::vector<int>& labels);

// Supervised contrastive loss with positives = other rows of the same class.
// Anchors without positives are excluded; throws ContractError when no
// anchor has a positive.
Var supcon_loss(const ViewBatch& batch, double temperature);
// True when at least one row shares its class with another row.
bool has_positive_pair(const std::vector<int>& class_labels);

// cross_entropy + lambda * supcon_loss. With lambda == 0 the contrastive term
// is not evaluated at all.
Var total_loss(Var logits, const std::vector<int>& labels, const ViewBatch& batch, const LossConfig& config);

// Number of supcon_loss evaluations since process start.
std::size_t contrastive_invocations();

// Mean Shannon entropy (natural log) of probability rows, 0 ln 0 := 0.
double prediction_entropy(const Tensor& probs);

}  // namespace kneedg

#endif  // KNEEDG_LOSSES_HPP_

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

#ifndef KNEEDG_TRAINING_HPP_
#define KNEEDG_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kneedg/cohort.hpp"
#include "kneedg/folds.hpp"
#include "kneedg/gin.hpp"
#include "kneedg/losses.hpp"
#include "kneedg/metrics.hpp"
#include "kneedg/network.hpp"

namespace kneedg {

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 8;  // original images per mini-batch
  double lr = 0.01;
  double momentum = 0.9;
  LossConfig loss;
  std::optional<GinConfig> gin;  // disabled when empty
  NormKind norm_kind = NormKind::Batch;
  bool include_original_view = true;
  double selection_threshold = 0.65;
  std::uint64_t seed = 1;
  // When set, every epoch's checkpoint is written here.
  std::filesystem::path checkpoint_dir;

  void validate() const;

  // Batch norm, no augmentation, cross-entropy only.
  static TrainConfig baseline();
  // Instance norm, GIN views, cross-entropy plus supervised contrastive term.
  static TrainConfig proposed();
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double source_val_accuracy = 0.0;
  double target_val_mean_entropy = 0.0;
  std::string checkpoint_path;

  bool operator==(const EpochLog&) const = default;
};

struct TrainResult {
  std::vector<EpochLog> logs;
  std::vector<std::vector<Tensor>> snapshots;  // model state after each epoch
};

// O(1) lookup of records by (subject, domain).
class RecordIndex {
 public:
  explicit RecordIndex(const std::vector<VolumeRecord>& records);
  const VolumeRecord& at(int subject_id, Domain domain) const;

 private:
  std::map<std::pair<int, int>, const VolumeRecord*> map_;
};

// Consecutive groups of batch_size; a lone trailing subject joins the
// previous group.
std::vector<std::vector<int>> split_batches(const std::vector<int>& order, std::size_t batch_size);

struct TrainingBatch {
  Tensor inputs;  // [rows, 1, D, H, W]
  std::vector<int> labels;
  std::vector<int> image_ids;
};

// Classifier rows for one mini-batch. With GIN on, each subject contributes
// [original (if kept), views...] consecutively, drawn from
// gin_rng.derive(subject).
TrainingBatch assemble_batch(const std::vector<int>& subjects, const std::function<const Tensor&(int)>& volume,
                             const std::function<int(int)>& label, const TrainConfig& train, const RngStream& gin_rng);

// Trains one fold from scratch. Throws DivergenceError on a non-finite loss.
TrainResult train_fold(const FoldSplit& fold, const std::vector<VolumeRecord>& records, const NetConfig& net,
                       const TrainConfig& train);

struct Selection {
  std::size_t index = 0;
  bool fallback = false;  // no epoch reached the threshold
};

// Among epochs with source_val_accuracy >= threshold, the one with minimal
// target_val_mean_entropy (earliest on ties); otherwise argmax accuracy.
Selection select_checkpoint(const std::vector<EpochLog>& logs, double threshold);

struct Evaluation {
  std::vector<int> subject_ids;
  std::vector<int> labels;
  std::vector<double> scores;  // softmax probability of class 1
  MetricsReport report;
};

// Inference-mode scores for `subjects` in `domain`, evaluated in groups of
// `batch` volumes.
Evaluation evaluate(Model& model, const RecordIndex& index, const std::vector<int>& subjects, Domain domain,
                    std::size_t batch = 16);

// Class-1 probabilities and mean prediction entropy without building a report.
std::vector<double> predict_scores(Model& model, const RecordIndex& index, const std::vector<int>& subjects,
                                   Domain domain, std::size_t batch, double* mean_entropy);

}  // namespace kneedg

#endif  // KNEEDG_TRAINING_HPP_

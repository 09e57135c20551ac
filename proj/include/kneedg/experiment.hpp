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

#ifndef KNEEDG_EXPERIMENT_HPP_
#define KNEEDG_EXPERIMENT_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kneedg/cohort.hpp"
#include "kneedg/folds.hpp"
#include "kneedg/metrics.hpp"
#include "kneedg/network.hpp"
#include "kneedg/training.hpp"

namespace kneedg {

inline constexpr int kConfigSchemaVersion = 1;

// Both models share cohort, folds and seed; only their TrainConfigs differ.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  CohortSpec cohort;
  // Input dims are taken from the cohort, not from this struct.
  NetConfig net;
  TrainConfig baseline;
  TrainConfig proposed;
  int n_folds = 7;
  int source_val_size = 20;  // subjects
  std::filesystem::path output_dir;  // empty: caller decides
  std::uint64_t seed = 1;

  ExperimentConfig();

  // Throws ConfigError naming the field. Enforces the baseline (Batch, no
  // GIN, lambda 0) and proposed (Instance, GIN, lambda > 0) definitions.
  void validate() const;

  // Copies with the master seed and cohort dims applied.
  CohortSpec resolved_cohort() const;
  NetConfig resolved_net() const;
  TrainConfig resolved_train(bool proposed_model) const;
};

// Strict parse: unknown keys and wrong types raise ConfigError with the
// dotted path of the key. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

std::vector<FoldSplit> experiment_folds(const ExperimentConfig& cfg, const std::vector<VolumeRecord>& records);

enum class Split { SourceVal = 0, TargetVal = 1, SourceTest = 2, TargetTest = 3 };
inline constexpr std::array<Split, 4> kSplits{Split::SourceVal, Split::TargetVal, Split::SourceTest, Split::TargetTest};
std::string to_string(Split s);

struct FoldOutcome {
  std::string model;  // "baseline" or "proposed"
  int fold = 0;
  bool diverged = false;
  std::string error;
  std::vector<EpochLog> logs;
  Selection selection;
  std::array<Evaluation, 4> splits;  // indexed by Split
};

struct RunOptions {
  bool run_baseline = true;
  bool run_proposed = true;
  std::vector<int> folds;  // empty: all folds
  std::size_t jobs = 1;
  // When empty nothing is written.
  std::filesystem::path output_dir;
  bool save_epoch_checkpoints = true;
};

struct ExperimentResult {
  std::vector<FoldOutcome> outcomes;  // model-major, folds ascending
  std::string folds_digest;
  // Paired over folds where both models finished; present when both ran and
  // at least two such folds exist.
  std::optional<std::array<TTestResult, 4>> comparison;

  std::vector<const FoldOutcome*> finished(const std::string& model) const;
  bool any_diverged() const;
};

// Runs every (model, fold) job on a pool of `jobs` threads. Results do not
// depend on `jobs`. Divergent folds are recorded and the rest continue.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<VolumeRecord>& records,
                                const RunOptions& options);

// Fixed-format number used by every CSV the experiment writes.
std::string fmt_fixed(double v, int digits = 6);

}  // namespace kneedg

#endif  // KNEEDG_EXPERIMENT_HPP_

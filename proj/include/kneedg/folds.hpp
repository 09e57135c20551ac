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

#ifndef KNEEDG_FOLDS_HPP_
#define KNEEDG_FOLDS_HPP_

#include <filesystem>
#include <vector>

#include "kneedg/cohort.hpp"
#include "kneedg/rng.hpp"

namespace kneedg {

// Subject ids per role for one fold. The two test sets hold the same subjects;
// source_* roles are read from source-domain records, target_* from target.
struct FoldSplit {
  int fold_index = 0;
  std::vector<int> source_train;
  std::vector<int> source_val;
  std::vector<int> target_val;
  std::vector<int> source_test;
  std::vector<int> target_test;

  bool operator==(const FoldSplit&) const = default;
};

// Matched pairs are shuffled and dealt round-robin into n_folds groups.
// Fold f tests on group f; the next group (cyclically) is target
// validation; the rest form the training pool. Source validation takes
// whole pairs from the first pool group, up to source_val_size subjects,
// leaving at least one pair for training.
std::vector<FoldSplit> make_folds(const std::vector<VolumeRecord>& records, int n_folds, int source_val_size,
                                  RngStream rng);

// CSV rows fold,role,subject_id in a fixed order (used for digests).
void write_folds_csv(const std::vector<FoldSplit>& folds, const std::filesystem::path& path);

}  // namespace kneedg

#endif  // KNEEDG_FOLDS_HPP_

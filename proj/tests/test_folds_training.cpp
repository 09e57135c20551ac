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
#include <map>
#include <set>

#include "doctest.h"
#include "kneedg/error.hpp"
#include "kneedg/folds.hpp"
#include "kneedg/gin.hpp"
#include "kneedg/losses.hpp"
#include "kneedg/training.hpp"

using namespace kneedg;

namespace {

CohortSpec tiny_cohort(int n_pairs) {
  CohortSpec s;
  s.n_pairs = n_pairs;
  s.slices = 6;
  s.height = 8;
  s.width = 8;
  s.seed = 2;
  return s;
}

NetConfig tiny_net() {
  NetConfig c;
  c.depth = 6;
  c.height = 8;
  c.width = 8;
  c.stem_channels = 2;
  c.blocks = {{2, 1}, {3, 2}};
  return c;
}

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

EpochLog log_of(double acc, double ent) {
  EpochLog l;
  l.source_val_accuracy = acc;
  l.target_val_mean_entropy = ent;
  return l;
}

}  // namespace

TEST_CASE("fold invariants") {
  const std::vector<VolumeRecord> records = generate_cohort(tiny_cohort(30));
  const std::vector<FoldSplit> folds = make_folds(records, 7, 6, RngStream(1, "folds"));
  REQUIRE(folds.size() == 7);
  std::map<int, int> pair_of;
  for (const VolumeRecord& r : records) pair_of[r.subject_id] = r.pair_id;

  std::multiset<int> tested;
  for (const FoldSplit& f : folds) {
    CHECK(sorted(f.source_test) == sorted(f.target_test));
    CHECK(f.source_val.size() == 6);
    tested.insert(f.source_test.begin(), f.source_test.end());
    const std::vector<const std::vector<int>*> roles{&f.source_train, &f.source_val, &f.target_val, &f.source_test};
    std::set<int> seen;
    for (const std::vector<int>* role : roles) {
      CHECK_FALSE(role->empty());
      std::map<int, int> per_pair;
      for (int s : *role) {
        CHECK(seen.insert(s).second);
        ++per_pair[pair_of.at(s)];
      }
      for (const auto& [pair, n] : per_pair) CHECK(n == 2);
    }
    CHECK(seen.size() == 60);
  }
  CHECK(tested.size() == 60);
  CHECK(std::set<int>(tested.begin(), tested.end()).size() == 60);

  CHECK(make_folds(records, 7, 6, RngStream(1, "folds")) == folds);
  // Training-side streams are independent of the fold stream.
  TrainConfig other = TrainConfig::proposed();
  other.seed = 99;
  CHECK(make_folds(records, 7, 6, RngStream(1, "folds")) == folds);
  CHECK_THROWS_AS(make_folds(generate_cohort(tiny_cohort(7)), 8, 6, RngStream(1, "folds")), ConfigError);
  CHECK_THROWS_AS(make_folds(records, 1, 6, RngStream(1, "folds")), ConfigError);
}

TEST_CASE("source validation never empties the training pool") {
  const std::vector<VolumeRecord> records = generate_cohort(tiny_cohort(9));
  for (const FoldSplit& f : make_folds(records, 7, 100, RngStream(3, "folds"))) {
    CHECK_FALSE(f.source_train.empty());
    CHECK(f.source_val.size() % 2 == 0);
  }
}

TEST_CASE("checkpoint selection examples") {
  CHECK(select_checkpoint({log_of(.70, .60), log_of(.72, .50), log_of(.60, .30)}, .65).index == 1);
  const Selection tie = select_checkpoint({log_of(.8, .4), log_of(.9, .4), log_of(.85, .4)}, .65);
  CHECK(tie.index == 0);
  CHECK_FALSE(tie.fallback);
  const Selection fb = select_checkpoint({log_of(.7, .1), log_of(.72, .5)}, .99);
  CHECK(fb.index == 1);
  CHECK(fb.fallback);

  RngStream rng(4, "select");
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EpochLog> logs;
    for (int e = 0; e < 8; ++e) logs.push_back(log_of(rng.uniform(0.4, 1.0), rng.uniform(0.0, 0.69)));
    std::vector<std::size_t> qualifying;
    for (std::size_t e = 0; e < logs.size(); ++e)
      if (logs[e].source_val_accuracy >= 0.65) qualifying.push_back(e);
    if (qualifying.empty()) continue;
    const std::size_t pick = qualifying[rng.below(qualifying.size())];
    const double floor_ent = std::min_element(logs.begin(), logs.end(), [](const EpochLog& a, const EpochLog& b) {
                               return a.target_val_mean_entropy < b.target_val_mean_entropy;
                             })->target_val_mean_entropy;
    logs[pick].target_val_mean_entropy = floor_ent - 1e-3;
    CHECK(select_checkpoint(logs, 0.65).index == pick);
  }
}

TEST_CASE("batch splitting and view expansion") {
  CHECK(split_batches({1, 2, 3, 4, 5}, 2) == std::vector<std::vector<int>>{{1, 2}, {3, 4, 5}});
  CHECK(split_batches({1, 2, 3, 4}, 2) == std::vector<std::vector<int>>{{1, 2}, {3, 4}});
  CHECK(split_batches({7}, 8) == std::vector<std::vector<int>>{{7}});

  const std::map<int, Tensor> vols{{10, Tensor({1, 4, 4, 4}, 0.2)}, {11, Tensor({1, 4, 4, 4}, 0.7)}};
  auto volume = [&](int s) -> const Tensor& { return vols.at(s); };
  auto label = [](int s) { return s % 2; };
  TrainConfig proposed = TrainConfig::proposed();
  const TrainingBatch b = assemble_batch({10, 11}, volume, label, proposed, RngStream(1, "g"));
  CHECK(b.inputs.shape() == Shape{12, 1, 4, 4, 4});
  CHECK(b.image_ids == std::vector<int>{10, 10, 10, 10, 10, 10, 11, 11, 11, 11, 11, 11});
  CHECK(b.labels == std::vector<int>{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1});
  CHECK(b.inputs[0] == 0.2);
  CHECK(b.inputs[6 * 64] == 0.7);

  proposed.include_original_view = false;
  CHECK(assemble_batch({10, 11}, volume, label, proposed, RngStream(1, "g")).labels.size() == 10);

  const std::size_t gin_before = gin_invocations();
  const TrainingBatch base = assemble_batch({10, 11}, volume, label, TrainConfig::baseline(), RngStream(1, "g"));
  CHECK(base.inputs.shape() == Shape{2, 1, 4, 4, 4});
  CHECK(base.image_ids == std::vector<int>{10, 11});
  CHECK(gin_invocations() == gin_before);
}

TEST_CASE("fold training") {
  const std::vector<VolumeRecord> records = generate_cohort(tiny_cohort(9));
  const FoldSplit fold = make_folds(records, 7, 4, RngStream(1, "folds")).front();
  const NetConfig net = tiny_net();

  SUBCASE("baseline touches neither augmentation nor the contrastive term") {
    TrainConfig base = TrainConfig::baseline();
    base.epochs = 2;
    const std::size_t g = gin_invocations(), c = contrastive_invocations();
    const TrainResult a = train_fold(fold, records, net, base);
    CHECK(gin_invocations() == g);
    CHECK(contrastive_invocations() == c);
    const TrainResult b = train_fold(fold, records, net, base);
    CHECK(a.logs == b.logs);
    REQUIRE(a.logs.size() == 2);
    for (const EpochLog& l : a.logs) {
      CHECK(l.source_val_accuracy >= 0.0);
      CHECK(l.source_val_accuracy <= 1.0);
      CHECK(l.target_val_mean_entropy >= 0.0);
      CHECK(l.target_val_mean_entropy <= std::log(2.0) + 1e-12);
    }
  }

  SUBCASE("proposed training is deterministic and uses both extra paths") {
    TrainConfig prop = TrainConfig::proposed();
    prop.epochs = 1;
    const std::size_t g = gin_invocations(), c = contrastive_invocations();
    const TrainResult a = train_fold(fold, records, net, prop);
    CHECK(gin_invocations() > g);
    CHECK(contrastive_invocations() > c);
    CHECK(train_fold(fold, records, net, prop).logs == a.logs);

    NetConfig in_net = net;
    in_net.norm_kind = NormKind::Instance;
    Model model(in_net, RngStream(1, "m"));
    model.restore(a.snapshots.back());
    const RecordIndex index(records);
    const Evaluation one = evaluate(model, index, fold.target_test, Domain::Target, 1);
    const Evaluation many = evaluate(model, index, fold.target_test, Domain::Target, 3);
    REQUIRE(one.scores.size() == many.scores.size());
    for (std::size_t i = 0; i < one.scores.size(); ++i) CHECK(std::fabs(one.scores[i] - many.scores[i]) < 1e-9);
    const Evaluation again = evaluate(model, index, fold.target_test, Domain::Target, 3);
    CHECK(again.scores == many.scores);
    CHECK(again.report.confusion == many.report.confusion);
  }

  SUBCASE("a constant model scores one half and predicts class 0") {
    Model model(net, RngStream(1, "c"));
    std::vector<Tensor*> params = model.parameters();
    // The classifier's weight and bias are the last two parameters.
    for (std::size_t i = params.size() - 2; i < params.size(); ++i) params[i]->values().assign(params[i]->numel(), 0.0);
    const Evaluation ev = evaluate(model, RecordIndex(records), fold.source_test, Domain::Source);
    for (double s : ev.scores) CHECK(s == 0.5);
    CHECK(ev.report.basic.accuracy == 0.5);
    CHECK(ev.report.confusion.tp + ev.report.confusion.fp == 0);
  }

  SUBCASE("empty roles are rejected") {
    FoldSplit broken = fold;
    broken.target_val.clear();
    CHECK_THROWS_AS(train_fold(broken, records, net, TrainConfig::baseline()), ConfigError);
  }
}

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

#include "kneedg/training.hpp"

#include <cmath>
#include <cstdio>

#include "kneedg/error.hpp"
#include "kneedg/ops.hpp"
#include "kneedg/optim.hpp"

namespace kneedg {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("must be >= 1", "epochs");
  if (batch_size < 1) throw ConfigError("must be >= 1", "batch_size");
  if (!(lr > 0.0)) throw ConfigError("must be > 0", "lr");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("must lie in [0, 1)", "momentum");
  if (!(selection_threshold > 0.0 && selection_threshold < 1.0))
    throw ConfigError("must lie in (0, 1)", "selection_threshold");
  loss.validate();
  if (gin) gin->validate();
}

TrainConfig TrainConfig::baseline() {
  TrainConfig c;
  c.norm_kind = NormKind::Batch;
  c.gin.reset();
  c.loss.contrastive_weight = 0.0;
  return c;
}

TrainConfig TrainConfig::proposed() {
  TrainConfig c;
  c.norm_kind = NormKind::Instance;
  c.gin = GinConfig{};
  c.loss.contrastive_weight = 0.5;
  return c;
}

RecordIndex::RecordIndex(const std::vector<VolumeRecord>& records) {
  for (const VolumeRecord& r : records) map_[{r.subject_id, static_cast<int>(r.domain)}] = &r;
}

const VolumeRecord& RecordIndex::at(int subject_id, Domain domain) const {
  auto it = map_.find({subject_id, static_cast<int>(domain)});
  if (it == map_.end())
    throw DataError("no " + to_string(domain) + " record for subject " + std::to_string(subject_id));
  return *it->second;
}

namespace {

// Stacks [1,D,H,W] volumes into [N,1,D,H,W].
Tensor stack(const std::vector<const Tensor*>& volumes) {
  const Shape& s = volumes.front()->shape();
  const std::size_t per = volumes.front()->numel();
  std::vector<double> data;
  data.reserve(per * volumes.size());
  for (const Tensor* v : volumes) {
    if (v->shape() != s) throw DimensionError("cannot stack volumes of different shapes");
    data.insert(data.end(), v->values().begin(), v->values().end());
  }
  return Tensor({volumes.size(), s[0], s[1], s[2], s[3]}, std::move(data));
}

}  // namespace

std::vector<double> predict_scores(Model& model, const RecordIndex& index, const std::vector<int>& subjects,
                                   Domain domain, std::size_t batch, double* mean_entropy) {
  std::vector<double> scores;
  scores.reserve(subjects.size());
  double entropy_sum = 0.0;
  for (std::size_t i = 0; i < subjects.size(); i += batch) {
    std::vector<Tensor> owned;
    const std::size_t end = std::min(subjects.size(), i + batch);
    for (std::size_t k = i; k < end; ++k) owned.push_back(index.at(subjects[k], domain).volume.to_tensor());
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : owned) ptrs.push_back(&t);
    const Inference out = infer(model, stack(ptrs), false);
    const Tensor probs = kernels::softmax_rows(out.logits);
    const std::size_t k = probs.dim(1);
    for (std::size_t r = 0; r < probs.dim(0); ++r) scores.push_back(probs[r * k + 1]);
    if (mean_entropy) entropy_sum += prediction_entropy(probs) * static_cast<double>(probs.dim(0));
  }
  if (mean_entropy) *mean_entropy = subjects.empty() ? 0.0 : entropy_sum / static_cast<double>(subjects.size());
  return scores;
}

Evaluation evaluate(Model& model, const RecordIndex& index, const std::vector<int>& subjects, Domain domain,
                    std::size_t batch) {
  Evaluation ev;
  ev.subject_ids = subjects;
  ev.scores = predict_scores(model, index, subjects, domain, batch, nullptr);
  for (int s : subjects) ev.labels.push_back(index.at(s, domain).label);
  ev.report = make_report(ev.scores, ev.labels);
  return ev;
}

std::vector<std::vector<int>> split_batches(const std::vector<int>& order, std::size_t batch_size) {
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
  // A lone trailing image would give batch statistics over a single sample.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

TrainingBatch assemble_batch(const std::vector<int>& subjects, const std::function<const Tensor&(int)>& volume,
                            const std::function<int(int)>& label, const TrainConfig& train, const RngStream& gin_rng) {
  std::vector<Tensor> views;
  std::vector<const Tensor*> rows;
  TrainingBatch out;
  for (int s : subjects) {
    const Tensor& x = volume(s);
    const int y = label(s);
    if (!train.gin || train.include_original_view) {
      rows.push_back(&x);
      out.labels.push_back(y);
      out.image_ids.push_back(s);
    }
    if (train.gin) {
      for (GinView& v : augment_views(x, gin_rng.derive(static_cast<std::uint64_t>(s)), *train.gin)) {
        views.push_back(std::move(v.volume));
        out.labels.push_back(y);
        out.image_ids.push_back(s);
      }
    }
  }
  // Pointers into `views` are taken only after it stops growing.
  if (train.gin) {
    std::vector<const Tensor*> ordered;
    std::size_t vi = 0;
    std::size_t ri = 0;
    for (std::size_t b = 0; b < subjects.size(); ++b) {
      if (train.include_original_view) ordered.push_back(rows[ri++]);
      for (std::size_t k = 0; k < train.gin->views_per_image; ++k) ordered.push_back(&views[vi++]);
    }
    rows = std::move(ordered);
  }
  out.inputs = stack(rows);
  return out;
}

TrainResult train_fold(const FoldSplit& fold, const std::vector<VolumeRecord>& records, const NetConfig& net,
                       const TrainConfig& train) {
  train.validate();
  if (fold.source_train.empty() || fold.source_val.empty() || fold.target_val.empty())
    throw ConfigError("fold " + std::to_string(fold.fold_index) + " has an empty training or validation role", "folds");
  const RecordIndex index(records);
  NetConfig cfg = net;
  cfg.norm_kind = train.norm_kind;
  const RngStream master = RngStream(train.seed, "train").derive(static_cast<std::uint64_t>(fold.fold_index));
  Model model(cfg, master.derive("init"));
  std::vector<Tensor*> params = model.parameters();
  SgdMomentum opt(train.lr, train.momentum);

  std::vector<Tensor> originals;
  std::map<int, std::size_t> slot;
  for (int s : fold.source_train) {
    slot[s] = originals.size();
    originals.push_back(index.at(s, Domain::Source).volume.to_tensor());
  }

  TrainResult result;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    RngStream shuffle_rng = master.derive("shuffle").derive(static_cast<std::uint64_t>(epoch));
    std::vector<int> order = fold.source_train;
    shuffle_rng.shuffle(order);
    const RngStream gin_rng = master.derive("gin").derive(static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::size_t loss_rows = 0;
    for (const std::vector<int>& batch : split_batches(order, train.batch_size)) {
      const TrainingBatch tb = assemble_batch(
          batch, [&](int s) -> const Tensor& { return originals[slot.at(s)]; },
          [&](int s) { return index.at(s, Domain::Source).label; }, train, gin_rng);
      const std::vector<int>& labels = tb.labels;
      Tape tape;
      const ForwardResult out = model.forward(tape, tape.constant(tb.inputs), true);
      Var loss;
      if (train.loss.contrastive_weight > 0.0 && has_positive_pair(labels)) {
        loss = total_loss(out.logits, labels, ViewBatch{out.embedding, labels, tb.image_ids}, train.loss);
      } else {
        loss = cross_entropy(out.logits, labels);
      }
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        throw DivergenceError(epoch, "non-finite training loss in fold " + std::to_string(fold.fold_index) +
                                         " at epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.step(params);
      zero_grads(params);
      loss_sum += value * static_cast<double>(labels.size());
      loss_rows += labels.size();
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(loss_rows);
    const Evaluation src_val = evaluate(model, index, fold.source_val, Domain::Source);
    log.source_val_accuracy = src_val.report.basic.accuracy;
    predict_scores(model, index, fold.target_val, Domain::Target, 16, &log.target_val_mean_entropy);
    if (!train.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
      std::filesystem::create_directories(train.checkpoint_dir);
      save_checkpoint(model, train.checkpoint_dir / name);
      log.checkpoint_path = (train.checkpoint_dir / name).string();
    }
    result.logs.push_back(log);
    result.snapshots.push_back(model.snapshot());
  }
  return result;
}

Selection select_checkpoint(const std::vector<EpochLog>& logs, double threshold) {
  if (logs.empty()) throw ContractError("select_checkpoint needs at least one epoch");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    if (logs[i].source_val_accuracy < threshold) continue;
    if (!best || logs[i].target_val_mean_entropy < logs[*best].target_val_mean_entropy) best = i;
  }
  if (best) return {*best, false};
  std::size_t arg = 0;
  for (std::size_t i = 1; i < logs.size(); ++i)
    if (logs[i].source_val_accuracy > logs[arg].source_val_accuracy) arg = i;
  return {arg, true};
}

}  // namespace kneedg

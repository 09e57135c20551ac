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

#include "kneedg/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "kneedg/error.hpp"
#include "kneedg/rng.hpp"

namespace kneedg {

using nlohmann::json;

namespace {

// Desk-scale network: two stride-2 stages after a (1,2,2) stem keep at least
// 2 voxels per axis at the head, which instance norm needs.
NetConfig desk_net() {
  NetConfig n;
  n.stem_channels = 4;
  n.stem_stride = {1, 2, 2};
  n.blocks = {{4, 1}, {4, 1}, {8, 2}, {8, 1}, {16, 2}, {16, 1}, {16, 1}, {16, 1}};
  return n;
}

void desk_schedule(TrainConfig& t) {
  t.epochs = 15;
  t.lr = 0.03;
}

}  // namespace

ExperimentConfig::ExperimentConfig()
    : net(desk_net()), baseline(TrainConfig::baseline()), proposed(TrainConfig::proposed()) {
  desk_schedule(baseline);
  desk_schedule(proposed);
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw ConfigError("unsupported version " + std::to_string(schema_version) + ", expected " +
                          std::to_string(kConfigSchemaVersion),
                      "schema_version");
  cohort.validate();
  if (n_folds < 3) throw ConfigError("must be >= 3", "n_folds");
  if (source_val_size < 2) throw ConfigError("must be >= 2", "source_val_size");
  if (cohort.n_pairs < n_folds + 2) throw ConfigError("need at least n_folds + 2 pairs", "cohort.n_pairs");
  resolved_net().validate();
  try {
    baseline.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "baseline." + e.field());
  }
  try {
    proposed.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "proposed." + e.field());
  }
  if (baseline.norm_kind != NormKind::Batch) throw ConfigError("baseline uses batch norm", "baseline.norm");
  if (baseline.gin) throw ConfigError("baseline trains without GIN", "baseline.gin");
  if (baseline.loss.contrastive_weight != 0.0)
    throw ConfigError("baseline trains with cross-entropy only", "baseline.contrastive_weight");
  if (proposed.norm_kind != NormKind::Instance) throw ConfigError("proposed uses instance norm", "proposed.norm");
  if (!proposed.gin) throw ConfigError("proposed trains with GIN", "proposed.gin");
  if (!(proposed.loss.contrastive_weight > 0.0))
    throw ConfigError("proposed needs a positive contrastive weight", "proposed.contrastive_weight");
}

CohortSpec ExperimentConfig::resolved_cohort() const {
  CohortSpec c = cohort;
  c.seed = seed;
  return c;
}

NetConfig ExperimentConfig::resolved_net() const {
  NetConfig n = net;
  n.depth = cohort.slices;
  n.height = cohort.height;
  n.width = cohort.width;
  return n;
}

TrainConfig ExperimentConfig::resolved_train(bool proposed_model) const {
  TrainConfig t = proposed_model ? proposed : baseline;
  t.seed = seed;
  return t;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

// Integers built in code are signed even when nonnegative; parsed ones are unsigned.
bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError("expected a number", field(key));
      out = v->get<double>();
    }
  }
  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError("expected an integer", field(key));
      out = v->get<int>();
    }
  }
  void get(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!is_count(*v)) throw ConfigError("expected a nonnegative integer", field(key));
      out = v->get<std::size_t>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError("expected true or false", field(key));
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError("expected a string", field(key));
      out = v->get<std::string>();
    }
  }
  void range(const std::string& key, double& lo, double& hi) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
        throw ConfigError("expected [min, max]", field(key));
      lo = (*v)[0].get<double>();
      hi = (*v)[1].get<double>();
    }
  }
  void triple(const std::string& key, std::array<std::size_t, 3>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 3) throw ConfigError("expected three nonnegative integers", field(key));
      for (std::size_t i = 0; i < 3; ++i) {
        if (!is_count((*v)[i])) throw ConfigError("expected three nonnegative integers", field(key));
        out[i] = (*v)[i].get<std::size_t>();
      }
    }
  }

  // Every key must have been consumed.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown key", field(it.key()));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_style(Reader& parent, const std::string& key, StyleParams& s) {
  const json* v = parent.find(key);
  if (!v) return;
  Reader r(*v, parent.field(key));
  r.range("exponent", s.exponent_min, s.exponent_max);
  r.range("gain", s.gain_min, s.gain_max);
  r.get("offset", s.offset);
  r.get("smoothing_sigma", s.smoothing_sigma);
  r.get("noise_sigma", s.noise_sigma);
  r.get("raw_slices", s.raw_slices);
  r.finish();
}

void read_cohort(Reader& parent, CohortSpec& c) {
  const json* v = parent.find("cohort");
  if (!v) return;
  Reader r(*v, "cohort");
  r.get("n_pairs", c.n_pairs);
  std::array<std::size_t, 3> dims{c.slices, c.height, c.width};
  r.triple("volume_dims", dims);
  c.slices = dims[0];
  c.height = dims[1];
  c.width = dims[2];
  r.get("blob_count", c.blob_count);
  r.range("blob_radius", c.blob_radius_min, c.blob_radius_max);
  r.range("blob_amplitude", c.blob_amplitude_min, c.blob_amplitude_max);
  r.get("background", c.background);
  r.get("effect_magnitude", c.effect_magnitude);
  r.get("lesion_radius", c.lesion_radius);
  read_style(r, "source_style", c.source_style);
  read_style(r, "target_style", c.target_style);
  r.finish();
}

void read_net(Reader& parent, NetConfig& n) {
  const json* v = parent.find("net");
  if (!v) return;
  Reader r(*v, "net");
  r.get("stem_channels", n.stem_channels);
  r.get("stem_kernel", n.stem_kernel);
  r.triple("stem_stride", n.stem_stride);
  r.get("pool", n.pool);
  if (const json* b = r.find("blocks")) {
    if (!b->is_array()) throw ConfigError("expected a list of [channels, stride]", "net.blocks");
    n.blocks.clear();
    for (const json& item : *b) {
      if (!item.is_array() || item.size() != 2 || !is_count(item[0]) || !is_count(item[1]))
        throw ConfigError("expected a list of [channels, stride]", "net.blocks");
      n.blocks.push_back({item[0].get<std::size_t>(), item[1].get<std::size_t>()});
    }
  }
  r.get("eps", n.eps);
  r.get("bn_momentum", n.bn_momentum);
  r.finish();
}

void read_train(Reader& parent, const std::string& key, TrainConfig& t) {
  const json* v = parent.find(key);
  if (!v) return;
  Reader r(*v, key);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("lr", t.lr);
  r.get("momentum", t.momentum);
  std::string norm = to_string(t.norm_kind);
  r.get("norm", norm);
  try {
    t.norm_kind = parse_norm_kind(norm);
  } catch (const Error&) {
    throw ConfigError("expected \"batch\" or \"instance\"", r.field("norm"));
  }
  r.get("contrastive_weight", t.loss.contrastive_weight);
  r.get("temperature", t.loss.temperature);
  r.get("include_original_view", t.include_original_view);
  r.get("selection_threshold", t.selection_threshold);
  if (const json* g = r.find("gin")) {
    if (g->is_null()) {
      t.gin.reset();
    } else {
      GinConfig gc = t.gin.value_or(GinConfig{});
      Reader gr(*g, r.field("gin"));
      gr.get("layers", gc.n_layers);
      gr.get("hidden_channels", gc.hidden_channels);
      gr.get("kernel", gc.kernel);
      gr.get("leaky_slope", gc.leaky_slope);
      gr.get("bias_std", gc.bias_std);
      gr.get("renormalize", gc.renormalize);
      gr.get("views", gc.views_per_image);
      gr.finish();
      t.gin = gc;
    }
  }
  r.finish();
}

json style_json(const StyleParams& s) {
  return {{"exponent", {s.exponent_min, s.exponent_max}},
          {"gain", {s.gain_min, s.gain_max}},
          {"offset", s.offset},
          {"smoothing_sigma", s.smoothing_sigma},
          {"noise_sigma", s.noise_sigma},
          {"raw_slices", s.raw_slices}};
}

json train_json(const TrainConfig& t) {
  json j = {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"lr", t.lr},
            {"momentum", t.momentum},
            {"norm", to_string(t.norm_kind)},
            {"contrastive_weight", t.loss.contrastive_weight},
            {"temperature", t.loss.temperature},
            {"include_original_view", t.include_original_view},
            {"selection_threshold", t.selection_threshold}};
  if (t.gin) {
    j["gin"] = {{"layers", t.gin->n_layers},         {"hidden_channels", t.gin->hidden_channels},
                {"kernel", t.gin->kernel},           {"leaky_slope", t.gin->leaky_slope},
                {"bias_std", t.gin->bias_std},       {"renormalize", t.gin->renormalize},
                {"views", t.gin->views_per_image}};
  } else {
    j["gin"] = nullptr;
  }
  return j;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Reader r(j, "");
  if (!r.find("schema_version")) throw ConfigError("required", "schema_version");
  r.get("schema_version", cfg.schema_version);
  r.get("seed", cfg.seed);
  r.get("n_folds", cfg.n_folds);
  r.get("source_val_size", cfg.source_val_size);
  std::string out;
  r.get("output_dir", out);
  cfg.output_dir = out;
  read_cohort(r, cfg.cohort);
  read_net(r, cfg.net);
  read_train(r, "baseline", cfg.baseline);
  read_train(r, "proposed", cfg.proposed);
  r.finish();
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const CohortSpec& c = cfg.cohort;
  json blocks = json::array();
  for (const BlockSpec& b : cfg.net.blocks) blocks.push_back({b.channels, b.stride});
  json j = {
      {"schema_version", cfg.schema_version},
      {"seed", cfg.seed},
      {"n_folds", cfg.n_folds},
      {"source_val_size", cfg.source_val_size},
      {"cohort",
       {{"n_pairs", c.n_pairs},
        {"volume_dims", {c.slices, c.height, c.width}},
        {"blob_count", c.blob_count},
        {"blob_radius", {c.blob_radius_min, c.blob_radius_max}},
        {"blob_amplitude", {c.blob_amplitude_min, c.blob_amplitude_max}},
        {"background", c.background},
        {"effect_magnitude", c.effect_magnitude},
        {"lesion_radius", c.lesion_radius},
        {"source_style", style_json(c.source_style)},
        {"target_style", style_json(c.target_style)}}},
      {"net",
       {{"stem_channels", cfg.net.stem_channels},
        {"stem_kernel", cfg.net.stem_kernel},
        {"stem_stride", cfg.net.stem_stride},
        {"pool", cfg.net.pool},
        {"blocks", blocks},
        {"eps", cfg.net.eps},
        {"bn_momentum", cfg.net.bn_momentum}}},
      {"baseline", train_json(cfg.baseline)},
      {"proposed", train_json(cfg.proposed)}};
  if (!cfg.output_dir.empty()) j["output_dir"] = cfg.output_dir.string();
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string(), "config");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), "config");
  }
  return config_from_json(j);
}

std::vector<FoldSplit> experiment_folds(const ExperimentConfig& cfg, const std::vector<VolumeRecord>& records) {
  return make_folds(records, cfg.n_folds, cfg.source_val_size, RngStream(cfg.seed, "folds"));
}

std::string to_string(Split s) {
  switch (s) {
    case Split::SourceVal: return "source_val";
    case Split::TargetVal: return "target_val";
    case Split::SourceTest: return "source_test";
    case Split::TargetTest: return "target_test";
  }
  return "?";
}

std::string fmt_fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  // "-0.000000" and "0.000000" must not differ between runs.
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}

namespace {

std::string fmt_sci(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6e", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

const char* kModels[2] = {"baseline", "proposed"};

std::vector<int> splits_subjects(const FoldSplit& f, Split s) {
  switch (s) {
    case Split::SourceVal: return f.source_val;
    case Split::TargetVal: return f.target_val;
    case Split::SourceTest: return f.source_test;
    case Split::TargetTest: return f.target_test;
  }
  return {};
}

Domain split_domain(Split s) {
  return s == Split::SourceVal || s == Split::SourceTest ? Domain::Source : Domain::Target;
}

void write_metrics_header(std::ofstream& out) {
  out << "fold,split,accuracy,precision,recall,f1,auc,tn,fp,fn,tp\n";
}

void write_metrics_row(std::ofstream& out, const std::string& fold, Split s, const MetricsReport& r) {
  out << fold << ',' << to_string(s) << ',' << fmt_fixed(r.basic.accuracy) << ',' << fmt_fixed(r.basic.precision)
      << ',' << fmt_fixed(r.basic.recall) << ',' << fmt_fixed(r.basic.f1) << ','
      << (r.auc_defined ? fmt_fixed(r.roc_auc) : "nan") << ',' << r.confusion.tn << ',' << r.confusion.fp << ','
      << r.confusion.fn << ',' << r.confusion.tp << '\n';
}

// Relative to the fold directory so the file does not depend on the output root.
std::string fs_relative(const std::string& path, const std::filesystem::path& dir) {
  return std::filesystem::path(path).lexically_relative(dir).generic_string();
}

void write_fold_files(const FoldOutcome& o, const std::filesystem::path& dir) {
  {
    std::ofstream out = open_out(dir / "epochs.csv");
    out << "epoch,train_loss,source_val_accuracy,target_val_mean_entropy,checkpoint_path,selected\n";
    for (std::size_t i = 0; i < o.logs.size(); ++i) {
      const EpochLog& l = o.logs[i];
      out << l.epoch << ',' << fmt_fixed(l.train_loss) << ',' << fmt_fixed(l.source_val_accuracy) << ','
          << fmt_fixed(l.target_val_mean_entropy) << ','
          << (l.checkpoint_path.empty() ? std::string() : fs_relative(l.checkpoint_path, dir)) << ',' << (!o.diverged && i == o.selection.index ? 1 : 0) << '\n';
    }
  }
  if (o.diverged) {
    std::ofstream out = open_out(dir / "status.txt");
    out << "diverged: " << o.error << '\n';
    return;
  }
  {
    std::ofstream out = open_out(dir / "selection.txt");
    out << "epoch " << o.selection.index << (o.selection.fallback ? " fallback" : "") << '\n';
  }
  std::ofstream metrics = open_out(dir / "metrics.csv");
  write_metrics_header(metrics);
  for (Split s : kSplits) {
    const Evaluation& ev = o.splits[static_cast<int>(s)];
    write_metrics_row(metrics, std::to_string(o.fold), s, ev.report);
    const ConfusionMatrix& cm = ev.report.confusion;
    std::ofstream csv = open_out(dir / ("confusion_" + to_string(s) + ".csv"));
    csv << "true,pred0,pred1\n0," << cm.tn << ',' << cm.fp << "\n1," << cm.fn << ',' << cm.tp << '\n';
    std::ofstream txt = open_out(dir / ("confusion_" + to_string(s) + ".txt"));
    txt << confusion_grid(cm);
    std::ofstream scores = open_out(dir / ("scores_" + to_string(s) + ".csv"));
    scores << "subject_id,label,score\n";
    for (std::size_t i = 0; i < ev.subject_ids.size(); ++i)
      scores << ev.subject_ids[i] << ',' << ev.labels[i] << ',' << fmt_fixed(ev.scores[i], 9) << '\n';
  }
}

FoldOutcome run_job(const ExperimentConfig& cfg, const std::vector<VolumeRecord>& records, const RecordIndex& index,
                    const FoldSplit& fold, bool proposed_model, const RunOptions& options) {
  FoldOutcome o;
  o.model = kModels[proposed_model ? 1 : 0];
  o.fold = fold.fold_index;
  const NetConfig net = cfg.resolved_net();
  TrainConfig train = cfg.resolved_train(proposed_model);
  std::filesystem::path dir;
  if (!options.output_dir.empty()) {
    dir = options.output_dir / o.model / ("fold_" + std::to_string(o.fold));
    std::filesystem::create_directories(dir);
    if (options.save_epoch_checkpoints) train.checkpoint_dir = dir / "checkpoints";
  }
  try {
    TrainResult tr = train_fold(fold, records, net, train);
    o.logs = std::move(tr.logs);
    o.selection = select_checkpoint(o.logs, train.selection_threshold);
    NetConfig n = net;
    n.norm_kind = train.norm_kind;
    Model model(n, RngStream(train.seed, "restore"));
    model.restore(tr.snapshots[o.selection.index]);
    for (Split s : kSplits)
      o.splits[static_cast<int>(s)] = evaluate(model, index, splits_subjects(fold, s), split_domain(s));
    if (!dir.empty()) save_checkpoint(model, dir / "selected.ckpt");
  } catch (const DivergenceError& e) {
    o.diverged = true;
    o.error = e.what();
  }
  if (!dir.empty()) write_fold_files(o, dir);
  return o;
}

double accuracy_of(const FoldOutcome& o, Split s) { return o.splits[static_cast<int>(s)].report.basic.accuracy; }

// mean and std, NaN std below two values.
std::pair<double, double> safe_mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  if (v.size() == 1) return {v[0], std::nan("")};
  const MeanStd ms = mean_std(v);
  return {ms.mean, ms.std};
}

void write_model_summary(const ExperimentResult& res, const std::string& model, const std::filesystem::path& dir,
                         const std::string& folds_digest) {
  std::filesystem::create_directories(dir);
  std::ofstream out = open_out(dir / "summary.csv");
  out << "fold,source_val,target_val,source_test,target_test,selected_epoch,fallback,status\n";
  std::array<std::vector<double>, 4> cols;
  for (const FoldOutcome& o : res.outcomes) {
    if (o.model != model) continue;
    out << o.fold;
    if (o.diverged) {
      out << ",nan,nan,nan,nan,,,diverged\n";
      continue;
    }
    for (Split s : kSplits) {
      cols[static_cast<int>(s)].push_back(accuracy_of(o, s));
      out << ',' << fmt_fixed(accuracy_of(o, s));
    }
    out << ',' << o.selection.index << ',' << (o.selection.fallback ? 1 : 0) << ",ok\n";
  }
  std::array<std::pair<double, double>, 4> ms;
  for (std::size_t k = 0; k < 4; ++k) ms[k] = safe_mean_std(cols[k]);
  out << "mean";
  for (const auto& m : ms) out << ',' << fmt_fixed(m.first);
  out << ",,,\nstd";
  for (const auto& m : ms) out << ',' << fmt_fixed(m.second);
  out << ",,,\n";

  std::ofstream metrics = open_out(dir / "metrics.csv");
  write_metrics_header(metrics);
  for (const FoldOutcome& o : res.outcomes)
    if (o.model == model && !o.diverged)
      for (Split s : kSplits) write_metrics_row(metrics, std::to_string(o.fold), s, o.splits[static_cast<int>(s)].report);

  std::ofstream digest = open_out(dir / "folds_digest.txt");
  digest << folds_digest << '\n';
}

void write_comparison(const ExperimentResult& res, const std::filesystem::path& dir) {
  std::ofstream out = open_out(dir / "comparison.csv");
  out << "split,n,baseline_mean,baseline_std,proposed_mean,proposed_std,t,df,p_one_sided\n";
  const auto base = res.finished("baseline");
  const auto prop = res.finished("proposed");
  std::map<int, const FoldOutcome*> pmap;
  for (const FoldOutcome* o : prop) pmap[o->fold] = o;
  for (Split s : kSplits) {
    std::vector<double> b, p;
    for (const FoldOutcome* o : base)
      if (auto it = pmap.find(o->fold); it != pmap.end()) {
        b.push_back(accuracy_of(*o, s));
        p.push_back(accuracy_of(*it->second, s));
      }
    const auto bm = safe_mean_std(b);
    const auto pm = safe_mean_std(p);
    out << to_string(s) << ',' << b.size() << ',' << fmt_fixed(bm.first) << ',' << fmt_fixed(bm.second) << ','
        << fmt_fixed(pm.first) << ',' << fmt_fixed(pm.second);
    if (res.comparison) {
      const TTestResult& t = (*res.comparison)[static_cast<int>(s)];
      out << ',' << fmt_fixed(t.t) << ',' << fmt_fixed(t.df, 0) << ',' << fmt_sci(t.p) << '\n';
    } else {
      out << ",nan,nan,nan\n";
    }
  }

  // Mean test-split metrics per model, the layout of the per-metric tables.
  std::ofstream tm = open_out(dir / "test_metrics.csv");
  tm << "model,split,accuracy,precision,recall,f1,auc\n";
  for (const char* model : kModels) {
    for (Split s : {Split::SourceTest, Split::TargetTest}) {
      std::array<std::vector<double>, 5> v;
      for (const FoldOutcome* o : res.finished(model)) {
        const MetricsReport& r = o->splits[static_cast<int>(s)].report;
        v[0].push_back(r.basic.accuracy);
        v[1].push_back(r.basic.precision);
        v[2].push_back(r.basic.recall);
        v[3].push_back(r.basic.f1);
        if (r.auc_defined) v[4].push_back(r.roc_auc);
      }
      if (v[0].empty()) continue;
      tm << model << ',' << to_string(s);
      for (const auto& col : v) tm << ',' << fmt_fixed(safe_mean_std(col).first);
      tm << '\n';
    }
  }
}

}  // namespace

std::vector<const FoldOutcome*> ExperimentResult::finished(const std::string& model) const {
  std::vector<const FoldOutcome*> out;
  for (const FoldOutcome& o : outcomes)
    if (o.model == model && !o.diverged) out.push_back(&o);
  return out;
}

bool ExperimentResult::any_diverged() const {
  return std::any_of(outcomes.begin(), outcomes.end(), [](const FoldOutcome& o) { return o.diverged; });
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<VolumeRecord>& records,
                                const RunOptions& options) {
  cfg.validate();
  if (options.jobs < 1) throw ConfigError("must be >= 1", "jobs");
  if (!options.run_baseline && !options.run_proposed) throw ConfigError("no model selected", "model");
  const std::vector<FoldSplit> folds = experiment_folds(cfg, records);
  std::vector<int> fold_ids = options.folds;
  if (fold_ids.empty())
    for (int f = 0; f < cfg.n_folds; ++f) fold_ids.push_back(f);
  std::sort(fold_ids.begin(), fold_ids.end());
  fold_ids.erase(std::unique(fold_ids.begin(), fold_ids.end()), fold_ids.end());
  for (int f : fold_ids)
    if (f < 0 || f >= cfg.n_folds) throw ConfigError("fold " + std::to_string(f) + " out of range", "folds");

  ExperimentResult res;
  std::ostringstream folds_text;
  for (const FoldSplit& f : folds) {
    auto emit = [&](const char* role, const std::vector<int>& ids) {
      for (int id : ids) folds_text << f.fold_index << ',' << role << ',' << id << '\n';
    };
    emit("source_train", f.source_train);
    emit("source_val", f.source_val);
    emit("target_val", f.target_val);
    emit("source_test", f.source_test);
    emit("target_test", f.target_test);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a64(folds_text.str())));
  res.folds_digest = hex;
  if (!options.output_dir.empty()) {
    std::filesystem::create_directories(options.output_dir);
    write_folds_csv(folds, options.output_dir / "folds.csv");
  }

  struct Job {
    bool proposed;
    int fold;
  };
  std::vector<Job> jobs;
  for (int m = 0; m < 2; ++m) {
    if ((m == 0 && !options.run_baseline) || (m == 1 && !options.run_proposed)) continue;
    for (int f : fold_ids) jobs.push_back({m == 1, f});
  }
  res.outcomes.resize(jobs.size());
  const RecordIndex index(records);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        res.outcomes[i] =
            run_job(cfg, records, index, folds[static_cast<std::size_t>(jobs[i].fold)], jobs[i].proposed, options);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(options.jobs, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  if (options.run_baseline && options.run_proposed) {
    const auto base = res.finished("baseline");
    std::map<int, const FoldOutcome*> pmap;
    for (const FoldOutcome* o : res.finished("proposed")) pmap[o->fold] = o;
    std::array<std::vector<double>, 4> b, p;
    for (const FoldOutcome* o : base)
      if (auto it = pmap.find(o->fold); it != pmap.end())
        for (Split s : kSplits) {
          b[static_cast<int>(s)].push_back(accuracy_of(*o, s));
          p[static_cast<int>(s)].push_back(accuracy_of(*it->second, s));
        }
    if (b[0].size() >= 2) {
      std::array<TTestResult, 4> tests;
      for (std::size_t k = 0; k < 4; ++k) tests[k] = paired_t_one_sided(b[k], p[k]);
      res.comparison = tests;
    }
  }

  if (!options.output_dir.empty()) {
    for (int m = 0; m < 2; ++m) {
      if ((m == 0 && !options.run_baseline) || (m == 1 && !options.run_proposed)) continue;
      write_model_summary(res, kModels[m], options.output_dir / kModels[m], res.folds_digest);
    }
    if (options.run_baseline && options.run_proposed) write_comparison(res, options.output_dir);
  }
  return res;
}

}  // namespace kneedg

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

#include "kneedg/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kneedg/error.hpp"
#include "kneedg/experiment.hpp"
#include "kneedg/gin.hpp"
#include "kneedg/rng.hpp"
#include "kneedg/volume_io.hpp"

namespace kneedg {

namespace fs = std::filesystem;

fs::path resolve_output_dir(const fs::path& flag, const fs::path& config_value) {
  if (!flag.empty()) return flag;
  if (!config_value.empty()) return config_value;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return "out";
}

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Manifest plus every volume it lists, in manifest order.
std::string cohort_digest(const fs::path& manifest) {
  std::string acc = file_digest(manifest);
  for (const ManifestRow& row : read_manifest(manifest)) acc += file_digest(manifest.parent_path() / row.path);
  return hex64(fnv1a64(acc));
}

}  // namespace

int cmd_generate(const fs::path& config, const fs::path& out_flag, std::ostream& out) {
  const ExperimentConfig cfg = load_config(config);
  const fs::path dir = resolve_output_dir(out_flag, cfg.output_dir) / "cohort";
  const CohortSpec spec = cfg.resolved_cohort();
  const std::vector<VolumeRecord> records = generate_cohort(spec);
  const fs::path manifest = save_cohort(records, dir);
  {
    std::ofstream s(dir / "spec.txt", std::ios::binary);
    if (!s) throw DataError("cannot write " + (dir / "spec.txt").string());
    s << spec.canonical() << '\n';
  }
  out << "records " << records.size() << '\n';
  out << "manifest " << manifest.string() << '\n';
  out << "manifest_digest " << file_digest(manifest) << '\n';
  out << "cohort_digest " << cohort_digest(manifest) << '\n';
  return kExitOk;
}

int cmd_run(const RunArgs& args, std::ostream& out) {
  ExperimentConfig cfg = load_config(args.config);
  if (args.seed) cfg.seed = *args.seed;
  RunOptions opt;
  if (args.model == "baseline") {
    opt.run_proposed = false;
  } else if (args.model == "proposed") {
    opt.run_baseline = false;
  } else if (args.model != "both") {
    throw ConfigError("expected baseline, proposed or both", "model");
  }
  opt.folds = args.folds;
  opt.jobs = args.jobs;
  opt.save_epoch_checkpoints = args.epoch_checkpoints;
  const fs::path root = resolve_output_dir(args.out, cfg.output_dir);
  const fs::path manifest = root / "cohort" / "manifest.csv";
  if (!fs::exists(manifest)) throw DataError("no cohort at " + manifest.string() + "; run generate first");
  {
    std::ifstream s(root / "cohort" / "spec.txt");
    std::string line;
    if (!s || !std::getline(s, line) || line != cfg.resolved_cohort().canonical())
      throw DataError("cohort at " + manifest.string() + " was generated from a different cohort config or seed");
  }
  const std::vector<VolumeRecord> records = load_cohort(manifest);
  opt.output_dir = root / "results";
  const ExperimentResult res = run_experiment(cfg, records, opt);

  out << "folds_digest " << res.folds_digest << '\n';
  for (const char* model : {"baseline", "proposed"}) {
    if ((std::string(model) == "baseline" && !opt.run_baseline) ||
        (std::string(model) == "proposed" && !opt.run_proposed))
      continue;
    for (const FoldOutcome& o : res.outcomes) {
      if (o.model != model) continue;
      out << model << " fold " << o.fold;
      if (o.diverged) {
        out << " diverged: " << o.error << '\n';
        continue;
      }
      for (Split s : kSplits)
        out << ' ' << to_string(s) << '=' << fmt_fixed(o.splits[static_cast<int>(s)].report.basic.accuracy, 4);
      out << " epoch=" << o.selection.index << (o.selection.fallback ? " (fallback)" : "") << '\n';
    }
  }
  if (res.comparison) {
    for (Split s : kSplits) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6e", (*res.comparison)[static_cast<int>(s)].p);
      out << "p_one_sided " << to_string(s) << ' ' << buf << '\n';
    }
  }
  out << "results " << opt.output_dir.string() << '\n';
  return res.any_diverged() ? kExitDivergence : kExitOk;
}

Table read_numeric_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(0, 1);
      cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
  t.names = split(line);
  t.columns.resize(t.names.size());
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split(line);
    if (cells.size() != t.names.size())
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(t.names.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      char* end = nullptr;
      const double v = std::strtod(cells[c].c_str(), &end);
      if (cells[c].empty() || *end != '\0')
        throw FormatError(path.string() + ": row " + std::to_string(row) + " column " + t.names[c] +
                          " is not a number");
      t.columns[c].push_back(v);
    }
  }
  return t;
}

PaperStats compute_paper_stats(const Table& table, std::vector<std::pair<std::string, std::string>> pairs) {
  PaperStats ps;
  auto column = [&](const std::string& name) -> const std::vector<double>& {
    for (std::size_t i = 0; i < table.names.size(); ++i)
      if (table.names[i] == name) return table.columns[i];
    throw ConfigError("no column named " + name, "pair");
  };
  for (std::size_t i = 0; i < table.names.size(); ++i)
    ps.columns.push_back({table.names[i], mean_std(table.columns[i])});
  if (pairs.empty()) {
    const std::string prefix = "baseline_";
    for (const std::string& name : table.names) {
      if (name.rfind(prefix, 0) != 0) continue;
      const std::string partner = "proposed_" + name.substr(prefix.size());
      for (const std::string& other : table.names)
        if (other == partner) pairs.emplace_back(name, partner);
    }
  }
  for (const auto& [b, p] : pairs) {
    const std::vector<double>& bc = column(b);
    const std::vector<double>& pc = column(p);
    if (bc.size() != pc.size()) throw DataError("columns " + b + " and " + p + " differ in length");
    ps.pairs.push_back({b, p, paired_t_one_sided(bc, pc)});
  }
  return ps;
}

int cmd_paper_stats(const fs::path& csv, const std::vector<std::pair<std::string, std::string>>& pairs,
                    std::ostream& out) {
  const PaperStats ps = compute_paper_stats(read_numeric_csv(csv), pairs);
  std::size_t width = 0;
  for (const auto& c : ps.columns) width = std::max(width, c.name.size());
  for (const auto& c : ps.columns)
    out << std::left << std::setw(static_cast<int>(width)) << c.name << "  " << fmt_fixed(c.stats.mean, 4)
        << " ± " << fmt_fixed(c.stats.std, 4) << '\n';
  for (const auto& p : ps.pairs) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "t=%.4f df=%.0f p=%.6e", p.test.t, p.test.df, p.test.p);
    out << p.baseline << " < " << p.proposed << "  " << buf << '\n';
  }
  return kExitOk;
}

int cmd_augment_preview(const fs::path& volume, std::size_t k, std::uint64_t seed, const fs::path& out_dir,
                        std::ostream& out) {
  if (k == 0) throw ConfigError("must be >= 1", "k");
  const Volume v = load_volume(volume);
  GinConfig gin;
  gin.views_per_image = k;
  const std::vector<GinView> views = augment_views(v.to_tensor(), RngStream(seed, "preview"), gin);
  fs::create_directories(out_dir);
  save_center_slice_pgm(v, out_dir / "original.pgm");
  std::ofstream log(out_dir / "alphas.csv", std::ios::binary);
  if (!log) throw DataError("cannot write " + (out_dir / "alphas.csv").string());
  log << "view,alpha\n";
  for (std::size_t i = 0; i < views.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "view_%02zu", i);
    const Volume aug = Volume::from_tensor(views[i].volume);
    save_volume(aug, out_dir / (std::string(stem) + ".dgv"));
    save_center_slice_pgm(aug, out_dir / (std::string(stem) + ".pgm"));
    log << i << ',' << fmt_fixed(views[i].alpha, 9) << '\n';
    out << stem << " alpha " << fmt_fixed(views[i].alpha, 6) << '\n';
  }
  return kExitOk;
}

}  // namespace kneedg

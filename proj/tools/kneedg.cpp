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

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kneedg/commands.hpp"
#include "kneedg/error.hpp"
#include "kneedg/experiment.hpp"

int main(int argc, char** argv) {
  using namespace kneedg;
  CLI::App app{"Domain-generalization experiments on synthetic two-domain knee volumes."};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir;

  auto* gen = app.add_subcommand("generate", "Write the synthetic cohort (DGV1 volumes and manifest).");
  gen->add_option("config", config, "Experiment config (JSON)")->required();
  gen->add_option("--out", out_dir, "Output root (default: config output_dir, then $KNEEDG_OUT, then ./out)");

  RunArgs run_args;
  std::string run_config, run_out;
  std::uint64_t run_seed = 0;
  bool no_epoch_ckpt = false;
  auto* run = app.add_subcommand("run", "Train and evaluate models over folds.");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();
  run->add_option("--model", run_args.model, "baseline, proposed or both")
      ->check(CLI::IsMember({"baseline", "proposed", "both"}));
  run->add_option("--folds", run_args.folds, "Fold indices (default: all)")->delimiter(',');
  run->add_option("--jobs", run_args.jobs, "Worker threads")->check(CLI::PositiveNumber);
  auto* seed_opt = run->add_option("--seed", run_seed, "Override the master seed");
  run->add_option("--out", run_out, "Output root");
  run->add_flag("--no-epoch-checkpoints", no_epoch_ckpt, "Keep only the selected checkpoint");

  std::string stats_csv;
  std::vector<std::string> pair_specs;
  auto* stats = app.add_subcommand("paper-stats", "Mean, std and one-sided paired t-tests of per-fold columns.");
  stats->add_option("csv", stats_csv, "CSV with a header row of column names")->required();
  stats->add_option("--pair", pair_specs, "BASELINE:PROPOSED column pair (default: baseline_X with proposed_X)");

  std::string volume, preview_out;
  std::size_t k = 5;
  std::uint64_t preview_seed = 1;
  auto* preview = app.add_subcommand("augment-preview", "Write k GIN views of one volume with center slices.");
  preview->add_option("volume", volume, "DGV1 volume")->required();
  preview->add_option("-k,--views", k, "Number of views");
  preview->add_option("--seed", preview_seed, "Seed");
  preview->add_option("--out", preview_out, "Output directory (default: <output root>/preview)");

  auto* defaults = app.add_subcommand("default-config", "Print the default experiment config.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help exits 0; malformed arguments are a configuration error.
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  return guarded(
      [&]() -> int {
        if (*gen) return cmd_generate(config, out_dir, std::cout);
        if (*run) {
          run_args.config = run_config;
          run_args.out = run_out;
          if (*seed_opt) run_args.seed = run_seed;
          run_args.epoch_checkpoints = !no_epoch_ckpt;
          return cmd_run(run_args, std::cout);
        }
        if (*stats) {
          std::vector<std::pair<std::string, std::string>> pairs;
          for (const std::string& spec : pair_specs) {
            const auto colon = spec.find(':');
            if (colon == std::string::npos) throw ConfigError("expected BASELINE:PROPOSED", "pair");
            pairs.emplace_back(spec.substr(0, colon), spec.substr(colon + 1));
          }
          return cmd_paper_stats(stats_csv, pairs, std::cout);
        }
        if (*preview) {
          const auto dir = preview_out.empty() ? resolve_output_dir({}, {}) / "preview"
                                               : std::filesystem::path(preview_out);
          return cmd_augment_preview(volume, k, preview_seed, dir, std::cout);
        }
        if (*defaults) {
          std::cout << config_to_json(ExperimentConfig{}).dump(2) << '\n';
          return kExitOk;
        }
        return kExitOk;
      },
      std::cerr);
}

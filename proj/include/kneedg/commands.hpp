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

#ifndef KNEEDG_COMMANDS_HPP_
#define KNEEDG_COMMANDS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "kneedg/metrics.hpp"

namespace kneedg {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitDivergence = 4 };

// Environment variable holding the default output directory.
inline constexpr const char* kOutputEnv = "KNEEDG_OUT";

// --out, then the config's output_dir, then $KNEEDG_OUT, then "out".
std::filesystem::path resolve_output_dir(const std::filesystem::path& flag, const std::filesystem::path& config_value);

// Runs `body`, printing library errors to `err` and mapping them to exit codes.
int guarded(const std::function<int()>& body, std::ostream& err);

// Writes <out>/cohort/{manifest.csv, spec.txt, volumes/...}.
int cmd_generate(const std::filesystem::path& config, const std::filesystem::path& out_flag, std::ostream& out);

struct RunArgs {
  std::filesystem::path config;
  std::string model = "both";  // baseline | proposed | both
  std::vector<int> folds;      // empty: all
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  bool epoch_checkpoints = true;
};
int cmd_run(const RunArgs& args, std::ostream& out);

// Numeric columns of a CSV with a header row.
struct Table {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
};
Table read_numeric_csv(const std::filesystem::path& path);

struct PaperStats {
  struct Column {
    std::string name;
    MeanStd stats;
  };
  struct Pair {
    std::string baseline;
    std::string proposed;
    TTestResult test;
  };
  std::vector<Column> columns;
  std::vector<Pair> pairs;
};

// Empty `pairs` pairs every baseline_X column with proposed_X.
PaperStats compute_paper_stats(const Table& table, std::vector<std::pair<std::string, std::string>> pairs);
int cmd_paper_stats(const std::filesystem::path& csv, const std::vector<std::pair<std::string, std::string>>& pairs,
                    std::ostream& out);

int cmd_augment_preview(const std::filesystem::path& volume, std::size_t k, std::uint64_t seed,
                        const std::filesystem::path& out_dir, std::ostream& out);

}  // namespace kneedg

#endif  // KNEEDG_COMMANDS_HPP_

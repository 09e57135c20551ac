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

#include "kneedg/folds.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "kneedg/error.hpp"

namespace kneedg {

namespace {

struct PairMembers {
  std::vector<int> subjects;
  int cases = 0;
  int controls = 0;
};

void append_pairs(std::vector<int>& out, const std::vector<int>& pairs, const std::map<int, PairMembers>& members) {
  for (int p : pairs)
    for (int s : members.at(p).subjects) out.push_back(s);
  std::sort(out.begin(), out.end());
}

}  // namespace

std::vector<FoldSplit> make_folds(const std::vector<VolumeRecord>& records, int n_folds, int source_val_size,
                                  RngStream rng) {
  if (n_folds < 3) throw ConfigError("need at least 3 folds (test, target validation, training)", "n_folds");
  if (source_val_size < 2) throw ConfigError("need at least one pair (2 subjects)", "source_val_size");

  std::map<int, PairMembers> members;
  for (const VolumeRecord& r : records) {
    if (r.domain != Domain::Source) continue;
    PairMembers& m = members[r.pair_id];
    m.subjects.push_back(r.subject_id);
    (r.label == 1 ? m.cases : m.controls)++;
  }
  for (const auto& [pair, m] : members)
    if (m.cases != 1 || m.controls != 1)
      throw DataError("pair " + std::to_string(pair) + " must hold exactly one case and one control");

  std::vector<int> pairs;
  for (const auto& [pair, m] : members) pairs.push_back(pair);
  if (pairs.size() < static_cast<std::size_t>(n_folds))
    throw ConfigError("have " + std::to_string(pairs.size()) + " pairs but every one of " + std::to_string(n_folds) +
                          " folds needs at least one",
                      "n_folds");
  rng.shuffle(pairs);

  std::vector<std::vector<int>> groups(static_cast<std::size_t>(n_folds));
  for (std::size_t i = 0; i < pairs.size(); ++i) groups[i % groups.size()].push_back(pairs[i]);

  const std::size_t val_pairs_wanted = static_cast<std::size_t>(source_val_size / 2);
  std::vector<FoldSplit> folds;
  for (int f = 0; f < n_folds; ++f) {
    FoldSplit split;
    split.fold_index = f;
    const auto group = [&](int offset) -> const std::vector<int>& {
      return groups[static_cast<std::size_t>((f + offset) % n_folds)];
    };
    append_pairs(split.source_test, group(0), members);
    split.target_test = split.source_test;
    append_pairs(split.target_val, group(1), members);

    std::vector<int> pool;
    for (int g = 2; g < n_folds; ++g) pool.insert(pool.end(), group(g).begin(), group(g).end());
    if (pool.size() < 2)
      throw ConfigError("training pool of fold " + std::to_string(f) + " has " + std::to_string(pool.size()) +
                            " pair(s); source validation and training need one each",
                        "n_folds");
    const std::size_t take = std::min({val_pairs_wanted, group(2).size(), pool.size() - 1});
    std::vector<int> val(pool.begin(), pool.begin() + static_cast<long>(take));
    std::vector<int> train(pool.begin() + static_cast<long>(take), pool.end());
    append_pairs(split.source_val, val, members);
    append_pairs(split.source_train, train, members);
    folds.push_back(std::move(split));
  }
  return folds;
}

void write_folds_csv(const std::vector<FoldSplit>& folds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open folds file for writing: " + path.string());
  os << "fold,role,subject_id\n";
  for (const FoldSplit& f : folds) {
    const std::pair<const char*, const std::vector<int>*> roles[] = {
        {"source_train", &f.source_train}, {"source_val", &f.source_val},   {"target_val", &f.target_val},
        {"source_test", &f.source_test},   {"target_test", &f.target_test}};
    for (const auto& [name, ids] : roles)
      for (int s : *ids) os << f.fold_index << ',' << name << ',' << s << '\n';
  }
}

}  // namespace kneedg

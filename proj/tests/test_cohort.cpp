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
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "kneedg/cohort.hpp"
#include "kneedg/error.hpp"
#include "kneedg/volume_io.hpp"
#include "oracles.hpp"

using namespace kneedg;
namespace fs = std::filesystem;

namespace {

Volume indexed_volume(std::size_t n, std::size_t h = 2, std::size_t w = 2) {
  Volume v(n, h, w);
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t i = 0; i < h * w; ++i) v.data[z * h * w + i] = static_cast<float>(z + 1);
  return v;
}

std::vector<float> slice_tags(const Volume& v) {
  std::vector<float> tags;
  for (std::size_t z = 0; z < v.slices(); ++z) tags.push_back(v.at(z, 0, 0));
  return tags;
}

CohortSpec small_spec(int n_pairs, std::uint64_t seed) {
  CohortSpec s;
  s.n_pairs = n_pairs;
  s.slices = 8;
  s.height = 12;
  s.width = 12;
  s.seed = seed;
  return s;
}

// Histogram mutual information (nats) with equal-width bins over each
// volume's own range.
double mutual_information(const Volume& a, const Volume& b, std::size_t bins = 16) {
  auto [amin, amax] = std::minmax_element(a.data.begin(), a.data.end());
  auto [bmin, bmax] = std::minmax_element(b.data.begin(), b.data.end());
  auto bin = [bins](float v, float lo, float hi) {
    if (hi <= lo) return std::size_t{0};
    return std::min(bins - 1, static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<float>(bins)));
  };
  std::vector<double> joint(bins * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
  const double n = static_cast<double>(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const std::size_t x = bin(a.data[i], *amin, *amax), y = bin(b.data[i], *bmin, *bmax);
    joint[x * bins + y] += 1.0 / n;
    pa[x] += 1.0 / n;
    pb[y] += 1.0 / n;
  }
  double mi = 0.0;
  for (std::size_t x = 0; x < bins; ++x)
    for (std::size_t y = 0; y < bins; ++y)
      if (joint[x * bins + y] > 0.0) mi += joint[x * bins + y] * std::log(joint[x * bins + y] / (pa[x] * pb[y]));
  return mi;
}

// Cross-fitted linear probe on raw source voxels: the direction is the
// case-minus-control mean difference estimated on one half of the pairs and
// scored on the other half, then the halves swap.
double linear_probe_auc(const std::vector<VolumeRecord>& records) {
  std::vector<const VolumeRecord*> src;
  for (const VolumeRecord& r : records)
    if (r.domain == Domain::Source) src.push_back(&r);
  const int n_pairs = static_cast<int>(src.size() / 2);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int half = 0; half < 2; ++half) {
    const std::size_t nv = src.front()->volume.data.size();
    std::vector<double> dir(nv, 0.0);
    for (const VolumeRecord* r : src) {
      if ((r->pair_id < n_pairs / 2) != (half == 0)) continue;
      const double sign = r->label == 1 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < nv; ++i) dir[i] += sign * r->volume.data[i];
    }
    for (const VolumeRecord* r : src) {
      if ((r->pair_id < n_pairs / 2) == (half == 0)) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < nv; ++i) s += dir[i] * r->volume.data[i];
      scores.push_back(s);
      labels.push_back(r->label);
    }
  }
  return oracle::auc_pairs(scores, labels);
}

}  // namespace

TEST_CASE("central_slices examples") {
  CHECK(central_slices(indexed_volume(36), 36) == indexed_volume(36));
  const Volume c = central_slices(indexed_volume(40), 36);
  REQUIRE(c.slices() == 36);
  CHECK(c.at(0, 0, 0) == 3.0f);  // source slice 2
  CHECK(c.at(35, 0, 0) == 38.0f);  // source slice 37
  const Volume p = central_slices(indexed_volume(30), 36);
  const std::vector<float> tags = slice_tags(p);
  REQUIRE(tags.size() == 36);
  for (std::size_t z = 0; z < 3; ++z) CHECK(tags[z] == 0.0f);
  for (std::size_t z = 33; z < 36; ++z) CHECK(tags[z] == 0.0f);
  CHECK(tags[3] == 1.0f);
  CHECK(tags[32] == 30.0f);
  const std::vector<float> odd = slice_tags(central_slices(indexed_volume(3), 6));
  CHECK(odd == std::vector<float>{0, 1, 2, 3, 0, 0});
  for (std::size_t n : {3u, 7u, 36u, 41u})
    for (std::size_t k : {1u, 4u, 36u})
      CHECK(central_slices(central_slices(indexed_volume(n), k), k) == central_slices(indexed_volume(n), k));
  CHECK_THROWS_AS(central_slices(indexed_volume(4), 0), ContractError);
}

TEST_CASE("downsample_slices examples") {
  CHECK(downsample_slices(indexed_volume(36), 36) == indexed_volume(36));
  const std::vector<float> big = slice_tags(downsample_slices(indexed_volume(160, 1, 1), 36));
  REQUIRE(big.size() == 36);
  CHECK(big[0] == 1.0f);
  CHECK(big[1] == 6.0f);  // index 5
  CHECK(big[35] == 160.0f);
  CHECK(slice_tags(downsample_slices(indexed_volume(3), 2)) == std::vector<float>{1, 3});
  CHECK_THROWS_AS(downsample_slices(indexed_volume(3), 4), ContractError);
}

TEST_CASE("cohort generation structure and determinism") {
  const CohortSpec spec = small_spec(8, 3);
  const std::vector<VolumeRecord> a = generate_cohort(spec), b = generate_cohort(spec);
  REQUIRE(a.size() == 32);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].volume == b[i].volume);
    CHECK(a[i].volume.dims == std::array<std::size_t, 3>{8, 12, 12});
  }
  for (int pair = 0; pair < 8; ++pair) {
    CHECK(find_record(a, 2 * pair, Domain::Source).label == 0);
    CHECK(find_record(a, 2 * pair + 1, Domain::Target).label == 1);
    CHECK(find_record(a, 2 * pair + 1, Domain::Source).pair_id == pair);
  }
  CHECK_THROWS_AS(find_record(a, 99, Domain::Source), DataError);
  CohortSpec other = spec;
  other.seed = 4;
  CHECK_FALSE(generate_cohort(other)[0].volume == a[0].volume);

  CohortSpec bad = spec;
  bad.n_pairs = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.target_style.gain_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("identity styles collapse the domains") {
  CohortSpec spec = small_spec(7, 5);
  spec.source_style = StyleParams{};
  spec.target_style = StyleParams{};
  spec.source_style.raw_slices = spec.slices;
  spec.target_style.raw_slices = spec.slices;
  const std::vector<VolumeRecord> r = generate_cohort(spec);
  for (int s = 0; s < 14; ++s) CHECK(find_record(r, s, Domain::Source).volume == find_record(r, s, Domain::Target).volume);
}

TEST_CASE("source and target share anatomy") {
  const std::vector<VolumeRecord> r = generate_cohort(small_spec(10, 6));
  double matched = 0.0, mismatched = 0.0;
  int wins = 0;
  for (int s = 0; s < 20; ++s) {
    const Volume& src = find_record(r, s, Domain::Source).volume;
    const double m = mutual_information(src, find_record(r, s, Domain::Target).volume);
    const double o = mutual_information(src, find_record(r, (s + 7) % 20, Domain::Target).volume);
    matched += m;
    mismatched += o;
    wins += m > o ? 1 : 0;
  }
  CHECK(matched > mismatched);
  CHECK(wins == 20);
}

TEST_CASE("null effect leaves a raw-voxel linear probe at chance") {
  CohortSpec spec = small_spec(200, 11);
  spec.effect_magnitude = 0.0;
  const double null_auc = linear_probe_auc(generate_cohort(spec));
  MESSAGE("null-effect probe AUC " << null_auc);
  CHECK(null_auc <= 0.55);
  CHECK(null_auc >= 0.45);
  // The same probe detects the default effect, so the chance result is not
  // a probe without power.
  spec.effect_magnitude = CohortSpec{}.effect_magnitude;
  CHECK(linear_probe_auc(generate_cohort(spec)) > 0.8);
}

TEST_CASE("volume files and manifest") {
  const fs::path dir = fs::temp_directory_path() / "kneedg_volume_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RngStream rng(12, "vol");
  Volume v(4, 8, 8);
  for (float& x : v.data) x = static_cast<float>(rng.normal());
  save_volume(v, dir / "v.dgv");
  CHECK(load_volume(dir / "v.dgv") == v);

  {
    std::ofstream f(dir / "magic.dgv", std::ios::binary);
    f << "DGV2";
    f.write(std::string(12 + 4 * 256, '\0').data(), 12 + 4 * 256);
  }
  CHECK_THROWS_AS(load_volume(dir / "magic.dgv"), FormatError);

  fs::copy_file(dir / "v.dgv", dir / "short.dgv");
  fs::resize_file(dir / "short.dgv", fs::file_size(dir / "short.dgv") - 4);
  CHECK_THROWS_AS(load_volume(dir / "short.dgv"), TruncationError);
  fs::copy_file(dir / "v.dgv", dir / "long.dgv");
  {
    std::ofstream f(dir / "long.dgv", std::ios::binary | std::ios::app);
    f.write("\0\0\0\0", 4);
  }
  CHECK_THROWS_AS(load_volume(dir / "long.dgv"), TruncationError);

  {
    std::ofstream f(dir / "huge.dgv", std::ios::binary);
    f << "DGV1";
    const unsigned char dims[12] = {0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff};
    f.write(reinterpret_cast<const char*>(dims), 12);
  }
  CHECK_THROWS_AS(load_volume(dir / "huge.dgv"), DimensionOverflowError);

  const std::vector<VolumeRecord> records = generate_cohort(small_spec(7, 2));
  const fs::path manifest = save_cohort(records, dir / "cohort");
  const std::vector<VolumeRecord> back = load_cohort(manifest);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].subject_id == records[i].subject_id);
    CHECK(back[i].pair_id == records[i].pair_id);
    CHECK(back[i].domain == records[i].domain);
    CHECK(back[i].label == records[i].label);
    CHECK(back[i].volume == records[i].volume);
  }
  CHECK(read_manifest(manifest).size() == records.size());
  CHECK(file_digest(manifest) == file_digest(manifest));
  {
    std::ofstream f(dir / "bad_manifest.csv");
    f << "subject_id,pair_id,domain,label,path\n0,0,elsewhere,0,a.dgv\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "bad_manifest.csv"), DataError);
  CHECK_THROWS_AS(load_volume(dir / "missing.dgv"), DataError);
  fs::remove_all(dir);
}

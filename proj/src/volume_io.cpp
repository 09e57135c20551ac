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

#include "kneedg/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "kneedg/binary_io.hpp"
#include "kneedg/error.hpp"
#include "kneedg/rng.hpp"

namespace kneedg {

namespace fs = std::filesystem;

namespace {
constexpr char kVolumeMagic[4] = {'D', 'G', 'V', '1'};
constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 31;
}  // namespace

void save_volume(const Volume& v, const fs::path& path) {
  if (v.data.size() != v.dims[0] * v.dims[1] * v.dims[2]) throw ContractError("volume data does not match its dims");
  for (std::size_t d : v.dims)
    if (d > std::numeric_limits<std::uint32_t>::max()) throw DimensionOverflowError("volume dimension exceeds u32");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open volume for writing: " + path.string());
  os.write(kVolumeMagic, 4);
  for (std::size_t d : v.dims) binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (float f : v.data) binary::write<float>(os, f);
  if (!os) throw DataError("failed writing volume: " + path.string());
}

Volume load_volume(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open volume: " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kVolumeMagic, 4) != 0)
    throw FormatError("not a DGV1 volume (bad magic): " + path.string());
  std::uint64_t dims[3];
  for (auto& d : dims) d = binary::read<std::uint32_t>(is, "volume header");
  std::uint64_t voxels = 1;
  for (std::uint64_t d : dims) {
    if (d == 0) throw FormatError("volume header declares a zero dimension: " + path.string());
    if (voxels > kMaxVoxels / d) throw DimensionOverflowError("volume dims overflow the addressable size: " + path.string());
    voxels *= d;
  }
  const auto header = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0, std::ios::end);
  const auto total = static_cast<std::uint64_t>(is.tellg());
  if (total - header != voxels * sizeof(float))
    throw TruncationError("volume payload has " + std::to_string(total - header) + " bytes, header declares " +
                          std::to_string(voxels * sizeof(float)) + ": " + path.string());
  is.seekg(static_cast<std::streamoff>(header));
  Volume v(dims[0], dims[1], dims[2]);
  for (float& f : v.data) f = binary::read<float>(is, "volume payload");
  return v;
}

void save_center_slice_pgm(const Volume& v, const fs::path& path) {
  const std::size_t z = v.slices() / 2;
  const auto begin = v.data.begin() + static_cast<long>(z * v.slice_size());
  const auto end = begin + static_cast<long>(v.slice_size());
  const auto [lo, hi] = std::minmax_element(begin, end);
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open graymap for writing: " + path.string());
  os << "P5\n" << v.width() << ' ' << v.height() << "\n255\n";
  for (auto it = begin; it != end; ++it) {
    const double t = range > 0.0 ? (static_cast<double>(*it) - *lo) / range : 0.0;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
}

void write_manifest(const std::vector<ManifestRow>& rows, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open manifest for writing: " + path.string());
  os << "subject_id,pair_id,domain,label,path\n";
  for (const ManifestRow& r : rows)
    os << r.subject_id << ',' << r.pair_id << ',' << to_string(r.domain) << ',' << r.label << ',' << r.path << '\n';
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "subject_id,pair_id,domain,label,path")
    throw FormatError("manifest header mismatch in " + path.string());
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError("manifest line " + std::to_string(lineno) + " needs 5 fields");
    try {
      rows.push_back({std::stoi(cells[0]), std::stoi(cells[1]), parse_domain(cells[2]), std::stoi(cells[3]), cells[4]});
    } catch (const std::logic_error&) {
      throw FormatError("manifest line " + std::to_string(lineno) + " has a non-numeric field");
    }
    if (rows.back().label != 0 && rows.back().label != 1)
      throw FormatError("manifest line " + std::to_string(lineno) + " has a non-binary label");
  }
  return rows;
}

fs::path save_cohort(const std::vector<VolumeRecord>& records, const fs::path& dir) {
  fs::create_directories(dir / "volumes" / "source");
  fs::create_directories(dir / "volumes" / "target");
  std::vector<ManifestRow> rows;
  for (const VolumeRecord& r : records) {
    std::ostringstream name;
    name << "volumes/" << to_string(r.domain) << '/' << std::setw(5) << std::setfill('0') << r.subject_id << ".dgv";
    save_volume(r.volume, dir / name.str());
    rows.push_back({r.subject_id, r.pair_id, r.domain, r.label, name.str()});
  }
  const fs::path manifest = dir / "manifest.csv";
  write_manifest(rows, manifest);
  return manifest;
}

std::vector<VolumeRecord> load_cohort(const fs::path& manifest) {
  const fs::path base = manifest.parent_path();
  std::vector<VolumeRecord> out;
  for (const ManifestRow& r : read_manifest(manifest))
    out.push_back({r.subject_id, r.pair_id, r.domain, r.label, load_volume(base / r.path)});
  return out;
}

std::string file_digest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for digest: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(buf.str());
  return hex.str();
}

}  // namespace kneedg

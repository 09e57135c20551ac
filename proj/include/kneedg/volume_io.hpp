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

#ifndef KNEEDG_VOLUME_IO_HPP_
#define KNEEDG_VOLUME_IO_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "kneedg/cohort.hpp"

namespace kneedg {

// DGV1: magic "DGV1", three u32 LE dims (slices, height, width), then
// row-major f32 LE voxels. Loading distinguishes FormatError (bad magic),
// DimensionOverflowError (dims that cannot be addressed) and
// TruncationError (payload length differs from the declared dims).
void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

// Center slice scaled min-max to 8-bit, binary portable graymap (P5).
void save_center_slice_pgm(const Volume& v, const std::filesystem::path& path);

struct ManifestRow {
  int subject_id;
  int pair_id;
  Domain domain;
  int label;
  std::string path;  // relative to the manifest's directory
};

// CSV with header subject_id,pair_id,domain,label,path.
void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// Writes every record as volumes/<domain>/<subject>.dgv plus manifest.csv
// under `dir`. Returns the manifest path.
std::filesystem::path save_cohort(const std::vector<VolumeRecord>& records, const std::filesystem::path& dir);
std::vector<VolumeRecord> load_cohort(const std::filesystem::path& manifest);

// FNV-1a over a file's bytes, hex encoded.
std::string file_digest(const std::filesystem::path& path);

}  // namespace kneedg

#endif  // KNEEDG_VOLUME_IO_HPP_

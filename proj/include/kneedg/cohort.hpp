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

#ifndef KNEEDG_COHORT_HPP_
#define KNEEDG_COHORT_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kneedg/tensor.hpp"

namespace kneedg {

// Single-channel volume, slices x height x width, row-major float32.
struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<float> data;

  Volume() = default;
  Volume(std::size_t slices, std::size_t height, std::size_t width, float fill = 0.0f);

  std::size_t slices() const { return dims[0]; }
  std::size_t height() const { return dims[1]; }
  std::size_t width() const { return dims[2]; }
  std::size_t slice_size() const { return dims[1] * dims[2]; }
  float& at(std::size_t z, std::size_t y, std::size_t x) { return data[(z * dims[1] + y) * dims[2] + x]; }
  float at(std::size_t z, std::size_t y, std::size_t x) const { return data[(z * dims[1] + y) * dims[2] + x]; }

  // [1, D, H, W] double tensor (one channel).
  Tensor to_tensor() const;
  static Volume from_tensor(const Tensor& t);

  bool operator==(const Volume&) const = default;
};

enum class Domain { Source, Target };
std::string to_string(Domain d);
Domain parse_domain(const std::string& s);

struct VolumeRecord {
  int subject_id = 0;
  int pair_id = 0;  // a case and its matched control share pair_id
  Domain domain = Domain::Source;
  int label = 0;    // 0 = control, 1 = case
  Volume volume;
};

// Monotone intensity curve gain * a^exponent + offset, then Gaussian blur,
// then additive Gaussian noise. Exponent and gain are drawn per subject.
struct StyleParams {
  double exponent_min = 1.0;
  double exponent_max = 1.0;
  double gain_min = 1.0;
  double gain_max = 1.0;
  double offset = 0.0;
  double smoothing_sigma = 0.0;  // voxels; 0 disables
  double noise_sigma = 0.0;
  // Slices acquired before slice preprocessing. 0 selects the default for
  // the domain (source: slices + 4, cropped centrally; target:
  // 2 * (slices - 1) + 1, decimated).
  std::size_t raw_slices = 0;
};

struct CohortSpec {
  int n_pairs = 70;
  std::size_t slices = 16;
  std::size_t height = 24;
  std::size_t width = 24;
  // Anatomy: smooth field of Gaussian blobs over a constant background.
  int blob_count = 6;
  double blob_radius_min = 3.0;
  double blob_radius_max = 5.0;
  double blob_amplitude_min = 0.3;
  double blob_amplitude_max = 0.5;
  double background = 0.1;
  // Cases carry one extra compact blob ("lesion") of this amplitude.
  double effect_magnitude = 1.5;
  double lesion_radius = 2.0;
  StyleParams source_style{0.8, 1.25, 0.9, 1.1, 0.0, 0.0, 0.03, 0};
  StyleParams target_style{1.5, 2.5, 0.15, 0.21, 0.05, 0.8, 0.02, 0};
  std::uint64_t seed = 1;

  void validate() const;
  std::string canonical() const;
};

// Two records (source, target) per subject, two subjects per pair. Subject
// ids are 2 * pair_id (control) and 2 * pair_id + 1 (case). Output order:
// subject-major, source before target.
std::vector<VolumeRecord> generate_cohort(const CohortSpec& spec);

// Keeps k central slices; pads with zero slices (floor before, rest after)
// when the volume has fewer than k.
Volume central_slices(const Volume& v, std::size_t k = 36);
// Keeps slice indices round(i * (N - 1) / (target - 1)), i in [0, target).
Volume downsample_slices(const Volume& v, std::size_t target = 36);

// Lookup helpers over a record list.
const VolumeRecord& find_record(const std::vector<VolumeRecord>& records, int subject_id, Domain domain);

}  // namespace kneedg

#endif  // KNEEDG_COHORT_HPP_

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

#include "kneedg/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kneedg/error.hpp"
#include "kneedg/rng.hpp"

namespace kneedg {

Volume::Volume(std::size_t slices, std::size_t height, std::size_t width, float fill)
    : dims{slices, height, width}, data(slices * height * width, fill) {}

Tensor Volume::to_tensor() const {
  return Tensor({1, dims[0], dims[1], dims[2]}, std::vector<double>(data.begin(), data.end()));
}

Volume Volume::from_tensor(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1) throw DimensionError("volume tensor must be [1,D,H,W], got " + shape_str(t.shape()));
  Volume v(t.dim(1), t.dim(2), t.dim(3));
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(t[i]);
  return v;
}

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw FormatError("unknown domain '" + s + "'");
}

void CohortSpec::validate() const {
  if (n_pairs < 7) throw ConfigError("must be >= 7 (one pair per fold)", "cohort.n_pairs");
  if (slices < 4 || height < 8 || width < 8) throw ConfigError("volume dims must be at least 4x8x8", "cohort.dims");
  if (blob_count < 0) throw ConfigError("must be >= 0", "cohort.blob_count");
  if (!(blob_radius_min > 0.0 && blob_radius_max >= blob_radius_min))
    throw ConfigError("need 0 < min <= max", "cohort.blob_radius");
  if (!(blob_amplitude_max >= blob_amplitude_min)) throw ConfigError("need min <= max", "cohort.blob_amplitude");
  if (!(effect_magnitude >= 0.0)) throw ConfigError("must be >= 0", "cohort.effect_magnitude");
  if (!(lesion_radius > 0.0)) throw ConfigError("must be > 0", "cohort.lesion_radius");
  for (const auto* s : {&source_style, &target_style}) {
    const char* name = s == &source_style ? "cohort.source_style" : "cohort.target_style";
    if (!(s->exponent_min > 0.0 && s->exponent_max >= s->exponent_min))
      throw ConfigError("exponent range must satisfy 0 < min <= max", name);
    if (!(s->gain_min > 0.0 && s->gain_max >= s->gain_min)) throw ConfigError("gain range must satisfy 0 < min <= max", name);
    if (!(s->smoothing_sigma >= 0.0) || !(s->noise_sigma >= 0.0))
      throw ConfigError("smoothing and noise must be >= 0", name);
  }
  if (target_style.raw_slices != 0 && target_style.raw_slices < slices)
    throw ConfigError("target raw slices must be >= slices (decimation only)", "cohort.target_style.raw_slices");
}

std::string CohortSpec::canonical() const {
  std::ostringstream os;
  os.precision(17);
  auto style = [&](const StyleParams& s) {
    os << s.exponent_min << ',' << s.exponent_max << ',' << s.gain_min << ',' << s.gain_max << ',' << s.offset << ','
       << s.smoothing_sigma << ',' << s.noise_sigma << ',' << s.raw_slices << ';';
  };
  os << n_pairs << ';' << slices << 'x' << height << 'x' << width << ';' << blob_count << ',' << blob_radius_min << ','
     << blob_radius_max << ',' << blob_amplitude_min << ',' << blob_amplitude_max << ',' << background << ';'
     << effect_magnitude << ',' << lesion_radius << ';';
  style(source_style);
  style(target_style);
  os << seed;
  return os.str();
}

namespace {

struct Blob {
  double z, y, x, radius, amplitude;
};

// Latent anatomy as a continuous function of (z, y, x) so that source and
// target grids sample the same structure.
struct Anatomy {
  double background;
  std::vector<Blob> blobs;

  double at(double z, double y, double x) const {
    double v = background;
    for (const Blob& b : blobs) {
      const double r2 = (z - b.z) * (z - b.z) + (y - b.y) * (y - b.y) + (x - b.x) * (x - b.x);
      v += b.amplitude * std::exp(-r2 / (2.0 * b.radius * b.radius));
    }
    return v;
  }
};

Anatomy draw_anatomy(const CohortSpec& spec, RngStream rng, bool is_case) {
  Anatomy a{spec.background, {}};
  const double zmax = static_cast<double>(spec.slices - 1);
  const double ymax = static_cast<double>(spec.height - 1);
  const double xmax = static_cast<double>(spec.width - 1);
  RngStream br = rng.derive("blobs");
  for (int i = 0; i < spec.blob_count; ++i) {
    Blob b;
    b.z = br.uniform(0.0, zmax);
    b.y = br.uniform(0.0, ymax);
    b.x = br.uniform(0.0, xmax);
    b.radius = br.uniform(spec.blob_radius_min, spec.blob_radius_max);
    b.amplitude = br.uniform(spec.blob_amplitude_min, spec.blob_amplitude_max);
    a.blobs.push_back(b);
  }
  // Drawn for every subject so that controls and cases consume identical
  // stream positions; only cases receive the lesion.
  RngStream lr = rng.derive("lesion");
  Blob lesion;
  lesion.z = lr.uniform(0.25 * zmax, 0.75 * zmax);
  lesion.y = lr.uniform(0.25 * ymax, 0.75 * ymax);
  lesion.x = lr.uniform(0.25 * xmax, 0.75 * xmax);
  lesion.radius = spec.lesion_radius;
  lesion.amplitude = spec.effect_magnitude;
  if (is_case && spec.effect_magnitude > 0.0) a.blobs.push_back(lesion);
  return a;
}

void gaussian_blur(std::vector<double>& v, std::size_t d, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) ks += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= ks;
  const std::size_t dims[3] = {d, h, w};
  const std::size_t strides[3] = {h * w, w, 1};
  std::vector<double> tmp(v.size());
  for (int axis = 0; axis < 3; ++axis) {
    const long n = static_cast<long>(dims[axis]);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const long pos = static_cast<long>((i / strides[axis]) % dims[axis]);
      double acc = 0.0, wsum = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const long q = pos + k;
        if (q < 0 || q >= n) continue;  // renormalized truncation at the borders
        acc += kernel[k + radius] * v[i + static_cast<long>(strides[axis]) * k];
        wsum += kernel[k + radius];
      }
      tmp[i] = acc / wsum;
    }
    v.swap(tmp);
  }
}

// Renders `anatomy` on `n_raw` slices at positions z_j and applies the style.
Volume render(const Anatomy& anatomy, const CohortSpec& spec, const StyleParams& style, std::size_t n_raw,
              const std::vector<double>& z_pos, RngStream rng) {
  const double exponent = rng.uniform(style.exponent_min, style.exponent_max);
  const double gain = rng.uniform(style.gain_min, style.gain_max);
  std::vector<double> v(n_raw * spec.height * spec.width);
  std::size_t i = 0;
  for (std::size_t z = 0; z < n_raw; ++z)
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x, ++i) {
        const double a = std::max(0.0, anatomy.at(z_pos[z], static_cast<double>(y), static_cast<double>(x)));
        v[i] = (exponent == 1.0 ? a : std::pow(a, exponent)) * gain + style.offset;
      }
  gaussian_blur(v, n_raw, spec.height, spec.width, style.smoothing_sigma);
  if (style.noise_sigma > 0.0) {
    RngStream nr = rng.derive("noise");
    for (double& x : v) x += nr.normal(0.0, style.noise_sigma);
  }
  Volume out(n_raw, spec.height, spec.width);
  for (std::size_t k = 0; k < v.size(); ++k) out.data[k] = static_cast<float>(v[k]);
  return out;
}

}  // namespace

std::vector<VolumeRecord> generate_cohort(const CohortSpec& spec) {
  spec.validate();
  const RngStream root(spec.seed, "cohort");
  const std::size_t k = spec.slices;
  const std::size_t n_src = spec.source_style.raw_slices ? spec.source_style.raw_slices : k + 4;
  const std::size_t n_tgt = spec.target_style.raw_slices ? spec.target_style.raw_slices : 2 * (k - 1) + 1;

  // Source slices sit on the unit grid offset so that central cropping keeps
  // z = 0..k-1; target slices span the same extent more densely.
  std::vector<double> z_src(n_src), z_tgt(n_tgt);
  const long src_offset = n_src >= k ? static_cast<long>((n_src - k) / 2) : -static_cast<long>((k - n_src) / 2);
  for (std::size_t j = 0; j < n_src; ++j) z_src[j] = static_cast<double>(static_cast<long>(j) - src_offset);
  for (std::size_t j = 0; j < n_tgt; ++j)
    z_tgt[j] = n_tgt == 1 ? 0.0 : static_cast<double>(j * (k - 1)) / static_cast<double>(n_tgt - 1);

  std::vector<VolumeRecord> out;
  out.reserve(static_cast<std::size_t>(spec.n_pairs) * 4);
  for (int pair = 0; pair < spec.n_pairs; ++pair) {
    for (int label = 0; label < 2; ++label) {
      const int subject = 2 * pair + label;
      const RngStream srng = root.derive("subject").derive(static_cast<std::uint64_t>(subject));
      const Anatomy anatomy = draw_anatomy(spec, srng.derive("anatomy"), label == 1);
      Volume src = render(anatomy, spec, spec.source_style, n_src, z_src, srng.derive("source"));
      Volume tgt = render(anatomy, spec, spec.target_style, n_tgt, z_tgt, srng.derive("target"));
      out.push_back({subject, pair, Domain::Source, label, central_slices(src, k)});
      out.push_back({subject, pair, Domain::Target, label, downsample_slices(tgt, k)});
    }
  }
  return out;
}

Volume central_slices(const Volume& v, std::size_t k) {
  if (k < 1) throw ContractError("central_slices needs k >= 1");
  const std::size_t n = v.slices();
  Volume out(k, v.height(), v.width(), 0.0f);
  const std::size_t ss = v.slice_size();
  if (n >= k) {
    const std::size_t first = (n - k) / 2;
    std::copy(v.data.begin() + static_cast<long>(first * ss), v.data.begin() + static_cast<long>((first + k) * ss),
              out.data.begin());
  } else {
    const std::size_t before = (k - n) / 2;
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<long>(before * ss));
  }
  return out;
}

Volume downsample_slices(const Volume& v, std::size_t target) {
  const std::size_t n = v.slices();
  if (target < 2) throw ContractError("downsample_slices needs target >= 2");
  if (n < target)
    throw ContractError("downsample_slices cannot upsample " + std::to_string(n) + " slices to " +
                        std::to_string(target) + "; use central_slices padding instead");
  Volume out(target, v.height(), v.width());
  const std::size_t ss = v.slice_size();
  for (std::size_t i = 0; i < target; ++i) {
    const auto src = static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(target - 1)));
    std::copy(v.data.begin() + static_cast<long>(src * ss), v.data.begin() + static_cast<long>((src + 1) * ss),
              out.data.begin() + static_cast<long>(i * ss));
  }
  return out;
}

const VolumeRecord& find_record(const std::vector<VolumeRecord>& records, int subject_id, Domain domain) {
  for (const VolumeRecord& r : records)
    if (r.subject_id == subject_id && r.domain == domain) return r;
  throw DataError("no " + to_string(domain) + " record for subject " + std::to_string(subject_id));
}

}  // namespace kneedg

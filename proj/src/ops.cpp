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

#include "kneedg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "kneedg/error.hpp"

namespace kneedg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct ConvGeometry {
  std::size_t n, cin, d, h, w;
  std::size_t cout, kd, kh, kw;
  std::size_t od, oh, ow;
  Conv3dParams p;

  std::size_t in_vox() const { return d * h * w; }
  std::size_t out_vox() const { return od * oh * ow; }
  std::size_t patch() const { return cin * kd * kh * kw; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && p.stride == Triple{1, 1, 1} && p.padding == Triple{0, 0, 0};
  }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Shape& b, const Conv3dParams& p) {
  if (x.size() != 5) throw DimensionError("conv3d input must be [N,C,D,H,W], got " + shape_str(x));
  if (w.size() != 5) throw DimensionError("conv3d weight must be [Cout,Cin,kd,kh,kw], got " + shape_str(w));
  if (w[1] != x[1])
    throw DimensionError("conv3d channel mismatch: input has " + std::to_string(x[1]) + ", weight expects " +
                         std::to_string(w[1]));
  if (b.size() != 1 || b[0] != w[0]) throw DimensionError("conv3d bias must be [Cout], got " + shape_str(b));
  for (std::size_t s : p.stride)
    if (s == 0) throw DimensionError("conv3d stride must be >= 1");
  ConvGeometry g{x[0], x[1], x[2], x[3], x[4], w[0], w[2], w[3], w[4], 0, 0, 0, p};
  g.od = conv_out_dim(g.d, g.kd, p.stride[0], p.padding[0]);
  g.oh = conv_out_dim(g.h, g.kh, p.stride[1], p.padding[1]);
  g.ow = conv_out_dim(g.w, g.kw, p.stride[2], p.padding[2]);
  return g;
}

// Unfolds one sample [Cin,D,H,W] into a [Cin*kd*kh*kw, oD*oH*oW] patch matrix.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t ov = g.out_vox();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* xc = x + ci * g.in_vox();
    for (std::size_t a = 0; a < g.kd; ++a)
      for (std::size_t b = 0; b < g.kh; ++b)
        for (std::size_t c = 0; c < g.kw; ++c, ++row) {
          double* dst = col + row * ov;
          for (std::size_t z = 0; z < g.od; ++z) {
            const long iz = static_cast<long>(z * g.p.stride[0] + a) - static_cast<long>(g.p.padding[0]);
            for (std::size_t y = 0; y < g.oh; ++y) {
              const long iy = static_cast<long>(y * g.p.stride[1] + b) - static_cast<long>(g.p.padding[1]);
              double* out = dst + (z * g.oh + y) * g.ow;
              if (iz < 0 || iz >= static_cast<long>(g.d) || iy < 0 || iy >= static_cast<long>(g.h)) {
                std::fill(out, out + g.ow, 0.0);
                continue;
              }
              const double* src = xc + (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w;
              for (std::size_t q = 0; q < g.ow; ++q) {
                const long ix = static_cast<long>(q * g.p.stride[2] + c) - static_cast<long>(g.p.padding[2]);
                out[q] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
              }
            }
          }
        }
  }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the sample.
void col2im_add(const ConvGeometry& g, const double* col, double* x) {
  const std::size_t ov = g.out_vox();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* xc = x + ci * g.in_vox();
    for (std::size_t a = 0; a < g.kd; ++a)
      for (std::size_t b = 0; b < g.kh; ++b)
        for (std::size_t c = 0; c < g.kw; ++c, ++row) {
          const double* src = col + row * ov;
          for (std::size_t z = 0; z < g.od; ++z) {
            const long iz = static_cast<long>(z * g.p.stride[0] + a) - static_cast<long>(g.p.padding[0]);
            if (iz < 0 || iz >= static_cast<long>(g.d)) continue;
            for (std::size_t y = 0; y < g.oh; ++y) {
              const long iy = static_cast<long>(y * g.p.stride[1] + b) - static_cast<long>(g.p.padding[1]);
              if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
              const double* in = src + (z * g.oh + y) * g.ow;
              double* dst = xc + (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w;
              for (std::size_t q = 0; q < g.ow; ++q) {
                const long ix = static_cast<long>(q * g.p.stride[2] + c) - static_cast<long>(g.p.padding[2]);
                if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += in[q];
              }
            }
          }
        }
  }
}

Tensor conv_forward(const ConvGeometry& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out({g.n, g.cout, g.od, g.oh, g.ow});
  const std::size_t ov = g.out_vox();
  std::vector<double> col(g.pointwise() ? 0 : g.patch() * ov);
  ConstMap wm(w.data().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.patch()));
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = x.data().data() + n * g.cin * g.in_vox();
    const double* cp = xn;
    if (!g.pointwise()) {
      im2col(g, xn, col.data());
      cp = col.data();
    }
    ConstMap cm(cp, static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(ov));
    MutMap om(out.data().data() + n * g.cout * ov, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(ov));
    om.noalias() = wm * cm;
    for (std::size_t co = 0; co < g.cout; ++co) om.row(static_cast<Eigen::Index>(co)).array() += b[co];
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw DimensionError("stride must be >= 1");
  if (kernel == 0 || kernel > in + 2 * pad)
    throw DimensionError("kernel " + std::to_string(kernel) + " does not fit padded extent " +
                         std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

Var conv3d(Var input, Var weight, Var bias, const Conv3dParams& params) {
  Tape& tape = *input.tape();
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), bias.shape(), params);
  Tensor out = conv_forward(g, input.value(), weight.value(), bias.value());
  return tape.record(std::move(out), {input, weight, bias}, [=](Tape& t, std::span<const double> dy) {
    const std::size_t ov = g.out_vox();
    const Tensor& x = t.value(input);
    const Tensor& w = t.value(weight);
    const bool need_x = t.needs_grad(input);
    const bool need_w = t.needs_grad(weight);
    const Eigen::Index cout = static_cast<Eigen::Index>(g.cout);
    const Eigen::Index patch = static_cast<Eigen::Index>(g.patch());
    const Eigen::Index vox = static_cast<Eigen::Index>(ov);
    if (t.needs_grad(bias)) {
      auto db = t.grad_buffer(bias);
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* row = dy.data() + (n * g.cout + co) * ov;
          double s = 0.0;
          for (std::size_t v = 0; v < ov; ++v) s += row[v];
          db[co] += s;
        }
    }
    if (!need_x && !need_w) return;
    std::vector<double> col(g.pointwise() ? 0 : g.patch() * ov);
    std::vector<double> dcol(need_x && !g.pointwise() ? g.patch() * ov : 0);
    ConstMap wm(w.data().data(), cout, patch);
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMap dym(dy.data() + n * g.cout * ov, cout, vox);
      const double* xn = x.data().data() + n * g.cin * g.in_vox();
      if (need_w) {
        const double* cp = xn;
        if (!g.pointwise()) {
          im2col(g, xn, col.data());
          cp = col.data();
        }
        ConstMap cm(cp, patch, vox);
        MutMap dwm(t.grad_buffer(weight).data(), cout, patch);
        dwm.noalias() += dym * cm.transpose();
      }
      if (need_x) {
        double* dxn = t.grad_buffer(input).data() + n * g.cin * g.in_vox();
        if (g.pointwise()) {
          MutMap dxm(dxn, patch, vox);
          dxm.noalias() += wm.transpose() * dym;
        } else {
          MutMap dcm(dcol.data(), patch, vox);
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(g, dcol.data(), dxn);
        }
      }
    }
  });
}

Var maxpool3d(Var input, Triple window, Triple stride) {
  const Tensor& x = input.value();
  require_rank(x, 5, "maxpool3d");
  const std::size_t n = x.dim(0), c = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  for (std::size_t a = 0; a < 3; ++a)
    if (window[a] == 0 || window[a] > x.dim(2 + a))
      throw DimensionError("maxpool3d window " + std::to_string(window[a]) + " exceeds input extent " +
                           std::to_string(x.dim(2 + a)));
  const std::size_t od = conv_out_dim(d, window[0], stride[0], 0);
  const std::size_t oh = conv_out_dim(h, window[1], stride[1], 0);
  const std::size_t ow = conv_out_dim(w, window[2], stride[2], 0);
  Tensor out({n, c, od, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* src = x.data().data() + nc * d * h * w;
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t q = 0; q < ow; ++q, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          bool first = true;
          for (std::size_t a = 0; a < window[0]; ++a)
            for (std::size_t b = 0; b < window[1]; ++b)
              for (std::size_t e = 0; e < window[2]; ++e) {
                const std::size_t idx = ((z * stride[0] + a) * h + (y * stride[1] + b)) * w + (q * stride[2] + e);
                if (first || src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                  first = false;
                }
              }
          out[o] = best;
          argmax[o] = nc * d * h * w + best_idx;
        }
  }
  return input.tape()->record(std::move(out), {input}, [=, argmax = std::move(argmax)](Tape& t, std::span<const double> dy) {
    auto dx = t.grad_buffer(input);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  });
}

Var relu(Var input) {
  Tensor out = input.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return input.tape()->record(std::move(out), {input}, [=](Tape& t, std::span<const double> dy) {
    const Tensor& x = t.value(input);
    auto dx = t.grad_buffer(input);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (x[i] > 0.0) dx[i] += dy[i];
  });
}

namespace {

// Shared machinery for batch and instance norm. `group_of(n, c)` maps a
// (sample, channel) pair to a statistics group; each group normalizes every
// spatial element of its member (sample, channel) slabs.
struct NormLayout {
  std::size_t n, c, s;
  bool per_instance;
  std::size_t groups() const { return per_instance ? n * c : c; }
  std::size_t group_of(std::size_t ni, std::size_t ci) const { return per_instance ? ni * c + ci : ci; }
  std::size_t group_size() const { return per_instance ? s : n * s; }
};

Tensor norm_apply(const NormLayout& L, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const std::vector<double>& mean, const std::vector<double>& invstd, std::vector<double>* xhat_out) {
  Tensor out(x.shape());
  if (xhat_out) xhat_out->assign(x.numel(), 0.0);
  for (std::size_t ni = 0; ni < L.n; ++ni)
    for (std::size_t ci = 0; ci < L.c; ++ci) {
      const std::size_t gi = L.group_of(ni, ci);
      const std::size_t off = (ni * L.c + ci) * L.s;
      for (std::size_t k = 0; k < L.s; ++k) {
        const double xh = (x[off + k] - mean[gi]) * invstd[gi];
        if (xhat_out) (*xhat_out)[off + k] = xh;
        out[off + k] = gamma[ci] * xh + beta[ci];
      }
    }
  return out;
}

void group_stats(const NormLayout& L, const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
  mean.assign(L.groups(), 0.0);
  var.assign(L.groups(), 0.0);
  for (std::size_t ni = 0; ni < L.n; ++ni)
    for (std::size_t ci = 0; ci < L.c; ++ci) {
      const std::size_t off = (ni * L.c + ci) * L.s;
      double s = 0.0;
      for (std::size_t k = 0; k < L.s; ++k) s += x[off + k];
      mean[L.group_of(ni, ci)] += s;
    }
  const double m = static_cast<double>(L.group_size());
  for (double& v : mean) v /= m;
  for (std::size_t ni = 0; ni < L.n; ++ni)
    for (std::size_t ci = 0; ci < L.c; ++ci) {
      const std::size_t gi = L.group_of(ni, ci);
      const std::size_t off = (ni * L.c + ci) * L.s;
      double s = 0.0;
      for (std::size_t k = 0; k < L.s; ++k) {
        const double dlt = x[off + k] - mean[gi];
        s += dlt * dlt;
      }
      var[gi] += s;
    }
  for (double& v : var) v /= m;
}

// Gradients of y = gamma * xhat + beta where xhat = (x - mean) * invstd.
// `batch_stats` selects whether mean/invstd depend on x (training statistics)
// or are constants (running statistics).
void norm_backward(Tape& t, const NormLayout& L, Var input, Var gamma, Var beta, std::span<const double> dy,
                   const std::vector<double>& xhat, const std::vector<double>& invstd, bool batch_stats) {
  const Tensor& g = t.value(gamma);
  if (t.needs_grad(gamma) || t.needs_grad(beta)) {
    std::vector<double> dg(L.c, 0.0), dbt(L.c, 0.0);
    for (std::size_t ni = 0; ni < L.n; ++ni)
      for (std::size_t ci = 0; ci < L.c; ++ci) {
        const std::size_t off = (ni * L.c + ci) * L.s;
        for (std::size_t k = 0; k < L.s; ++k) {
          dg[ci] += dy[off + k] * xhat[off + k];
          dbt[ci] += dy[off + k];
        }
      }
    if (t.needs_grad(gamma)) {
      auto b = t.grad_buffer(gamma);
      for (std::size_t ci = 0; ci < L.c; ++ci) b[ci] += dg[ci];
    }
    if (t.needs_grad(beta)) {
      auto b = t.grad_buffer(beta);
      for (std::size_t ci = 0; ci < L.c; ++ci) b[ci] += dbt[ci];
    }
  }
  if (!t.needs_grad(input)) return;
  auto dx = t.grad_buffer(input);
  if (!batch_stats) {
    for (std::size_t ni = 0; ni < L.n; ++ni)
      for (std::size_t ci = 0; ci < L.c; ++ci) {
        const std::size_t off = (ni * L.c + ci) * L.s;
        const double f = g[ci] * invstd[L.group_of(ni, ci)];
        for (std::size_t k = 0; k < L.s; ++k) dx[off + k] += dy[off + k] * f;
      }
    return;
  }
  std::vector<double> sum_dxh(L.groups(), 0.0), sum_dxh_xh(L.groups(), 0.0);
  for (std::size_t ni = 0; ni < L.n; ++ni)
    for (std::size_t ci = 0; ci < L.c; ++ci) {
      const std::size_t gi = L.group_of(ni, ci);
      const std::size_t off = (ni * L.c + ci) * L.s;
      for (std::size_t k = 0; k < L.s; ++k) {
        const double dxh = dy[off + k] * g[ci];
        sum_dxh[gi] += dxh;
        sum_dxh_xh[gi] += dxh * xhat[off + k];
      }
    }
  const double m = static_cast<double>(L.group_size());
  for (std::size_t ni = 0; ni < L.n; ++ni)
    for (std::size_t ci = 0; ci < L.c; ++ci) {
      const std::size_t gi = L.group_of(ni, ci);
      const std::size_t off = (ni * L.c + ci) * L.s;
      const double f = invstd[gi] / m;
      for (std::size_t k = 0; k < L.s; ++k) {
        const double dxh = dy[off + k] * g[ci];
        dx[off + k] += f * (m * dxh - sum_dxh[gi] - xhat[off + k] * sum_dxh_xh[gi]);
      }
    }
}

NormLayout norm_layout(const Tensor& x, const Tensor& gamma, const Tensor& beta, bool per_instance, const char* op) {
  if (x.rank() < 3) throw DimensionError(std::string(op) + " expects [N,C,...], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError(std::string(op) + " affine parameters must be [" + std::to_string(c) + "]");
  return NormLayout{x.dim(0), c, x.numel() / (x.dim(0) * c), per_instance};
}

}  // namespace

Var batch_norm(Var input, Var gamma, Var beta, double eps, bool training, BatchNormState& state) {
  const Tensor& x = input.value();
  const NormLayout L = norm_layout(x, gamma.value(), beta.value(), false, "batch_norm");
  if (state.running_mean.shape() != Shape{L.c} || state.running_var.shape() != Shape{L.c})
    throw DimensionError("batch_norm running statistics do not match channel count");
  std::vector<double> mean, var, invstd(L.c);
  if (training) {
    group_stats(L, x, mean, var);
    const double m = static_cast<double>(L.group_size());
    const double unbias = m > 1 ? m / (m - 1) : 1.0;
    for (std::size_t ci = 0; ci < L.c; ++ci) {
      state.running_mean[ci] = (1 - state.momentum) * state.running_mean[ci] + state.momentum * mean[ci];
      state.running_var[ci] = (1 - state.momentum) * state.running_var[ci] + state.momentum * var[ci] * unbias;
    }
  } else {
    mean = state.running_mean.values();
    var = state.running_var.values();
  }
  for (std::size_t ci = 0; ci < L.c; ++ci) invstd[ci] = 1.0 / std::sqrt(var[ci] + eps);
  std::vector<double> xhat;
  Tape& tape = *input.tape();
  const bool keep = tape.recording();
  Tensor out = norm_apply(L, x, gamma.value(), beta.value(), mean, invstd, keep ? &xhat : nullptr);
  return tape.record(std::move(out), {input, gamma, beta},
                     [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t, std::span<const double> dy) {
                       norm_backward(t, L, input, gamma, beta, dy, xhat, invstd, training);
                     });
}

Var instance_norm(Var input, Var gamma, Var beta, double eps) {
  const Tensor& x = input.value();
  const NormLayout L = norm_layout(x, gamma.value(), beta.value(), true, "instance_norm");
  std::vector<double> mean, var;
  group_stats(L, x, mean, var);
  std::vector<double> invstd(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) invstd[i] = 1.0 / std::sqrt(var[i] + eps);
  std::vector<double> xhat;
  Tape& tape = *input.tape();
  const bool keep = tape.recording();
  Tensor out = norm_apply(L, x, gamma.value(), beta.value(), mean, invstd, keep ? &xhat : nullptr);
  return tape.record(std::move(out), {input, gamma, beta},
                     [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t, std::span<const double> dy) {
                       norm_backward(t, L, input, gamma, beta, dy, xhat, invstd, true);
                     });
}

Var global_avg_pool(Var input) {
  const Tensor& x = input.value();
  if (x.rank() < 3) throw DimensionError("global_avg_pool expects [N,C,...], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), s = x.numel() / (n * c);
  Tensor out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < s; ++k) acc += x[i * s + k];
    out[i] = acc / static_cast<double>(s);
  }
  return input.tape()->record(std::move(out), {input}, [=](Tape& t, std::span<const double> dy) {
    auto dx = t.grad_buffer(input);
    const double inv = 1.0 / static_cast<double>(s);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t k = 0; k < s; ++k) dx[i * s + k] += dy[i] * inv;
  });
}

Var linear(Var input, Var weight, Var bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (w.dim(1) != x.dim(1))
    throw DimensionError("linear inner dimension mismatch: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  if (b.shape() != Shape{w.dim(0)}) throw DimensionError("linear bias must be [" + std::to_string(w.dim(0)) + "]");
  const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  Tensor out({n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = b[j];
      for (std::size_t k = 0; k < f; ++k) acc += x[i * f + k] * w[j * f + k];
      out[i * o + j] = acc;
    }
  return input.tape()->record(std::move(out), {input, weight, bias}, [=](Tape& t, std::span<const double> dy) {
    const Tensor& xv = t.value(input);
    const Tensor& wv = t.value(weight);
    if (t.needs_grad(input)) {
      auto dx = t.grad_buffer(input);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < o; ++j)
          for (std::size_t k = 0; k < f; ++k) dx[i * f + k] += dy[i * o + j] * wv[j * f + k];
    }
    if (t.needs_grad(weight)) {
      auto dw = t.grad_buffer(weight);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < o; ++j)
          for (std::size_t k = 0; k < f; ++k) dw[j * f + k] += dy[i * o + j] * xv[i * f + k];
    }
    if (t.needs_grad(bias)) {
      auto db = t.grad_buffer(bias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < o; ++j) db[j] += dy[i * o + j];
    }
  });
}

Var softmax(Var input) {
  Tensor out = kernels::softmax_rows(input.value());
  const std::size_t n = out.dim(0), k = out.dim(1);
  return input.tape()->record(out, {input}, [=, y = out](Tape& t, std::span<const double> dy) {
    auto dx = t.grad_buffer(input);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += dy[i * k + j] * y[i * k + j];
      for (std::size_t j = 0; j < k; ++j) dx[i * k + j] += y[i * k + j] * (dy[i * k + j] - dot);
    }
  });
}

Var l2_normalize_rows(Var input, double eps) {
  const Tensor& x = input.value();
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t n = x.dim(0), f = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < f; ++k) s += x[i * f + k] * x[i * f + k];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t k = 0; k < f; ++k) out[i * f + k] = x[i * f + k] / norms[i];
  }
  return input.tape()->record(out, {input}, [=, y = out, norms = std::move(norms)](Tape& t, std::span<const double> dy) {
    auto dx = t.grad_buffer(input);
    for (std::size_t i = 0; i < n; ++i) {
      if (norms[i] <= eps) {
        for (std::size_t k = 0; k < f; ++k) dx[i * f + k] += dy[i * f + k] / eps;
        continue;
      }
      double dot = 0.0;
      for (std::size_t k = 0; k < f; ++k) dot += y[i * f + k] * dy[i * f + k];
      for (std::size_t k = 0; k < f; ++k) dx[i * f + k] += (dy[i * f + k] - y[i * f + k] * dot) / norms[i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.tape()->record(std::move(out), {a, b}, [=](Tape& t, std::span<const double> dy) {
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto g = t.grad_buffer(v);
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [=](Tape& t, std::span<const double> dy) {
    const Tensor& av = t.value(a);
    const Tensor& bvv = t.value(b);
    if (t.needs_grad(a)) {
      auto g = t.grad_buffer(a);
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * bvv[i];
    }
    if (t.needs_grad(b)) {
      auto g = t.grad_buffer(b);
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, std::span<const double> dy) {
    auto g = t.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * factor;
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape()->record(Tensor::scalar(s), {a}, [=](Tape& t, std::span<const double> dy) {
    auto g = t.grad_buffer(a);
    for (double& v : g) v += dy[0];
  });
}

namespace kernels {

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv3dParams& params) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), bias.shape(), params);
  return conv_forward(g, input, weight, bias);
}

void leaky_relu_inplace(Tensor& t, double slope) {
  for (double& v : t.values())
    if (v < 0.0) v *= slope;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax expects [N,K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(logits[i * k + j] - mx);
      z += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
  }
  return out;
}

}  // namespace kernels

}  // namespace kneedg

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

#include "kneedg/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "kneedg/binary_io.hpp"
#include "kneedg/error.hpp"

namespace kneedg {

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'G', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::size_t kBlockKernel = 3;

ConvLayer make_conv(RngStream rng, std::size_t cin, std::size_t cout, std::size_t k, Triple stride) {
  ConvLayer layer;
  layer.weight = Tensor({cout, cin, k, k, k});
  layer.bias = Tensor({cout}, 0.0);
  const double std = std::sqrt(2.0 / static_cast<double>(cin * k * k * k));
  for (double& v : layer.weight.values()) v = rng.normal(0.0, std);
  layer.params.stride = stride;
  layer.params.padding = {k / 2, k / 2, k / 2};
  layer.weight.enable_grad();
  layer.bias.enable_grad();
  return layer;
}

NormLayer make_norm(std::size_t channels, const NetConfig& cfg) {
  NormLayer layer;
  layer.gamma = Tensor({channels}, 1.0);
  layer.beta = Tensor({channels}, 0.0);
  layer.gamma.enable_grad();
  layer.beta.enable_grad();
  if (cfg.norm_kind == NormKind::Batch) layer.stats.emplace(channels, cfg.bn_momentum);
  return layer;
}

void push_conv(std::vector<Tensor*>& out, ConvLayer& c) {
  out.push_back(&c.weight);
  out.push_back(&c.bias);
}

void push_norm(std::vector<Tensor*>& out, NormLayer& n) {
  out.push_back(&n.gamma);
  out.push_back(&n.beta);
}

void push_stats(std::vector<Tensor*>& out, NormLayer& n) {
  if (!n.stats) return;
  out.push_back(&n.stats->running_mean);
  out.push_back(&n.stats->running_var);
}

}  // namespace

std::string to_string(NormKind kind) { return kind == NormKind::Batch ? "batch" : "instance"; }

NormKind parse_norm_kind(const std::string& name) {
  if (name == "batch") return NormKind::Batch;
  if (name == "instance") return NormKind::Instance;
  throw ConfigError("expected 'batch' or 'instance', got '" + name + "'", "norm_kind");
}

void NetConfig::validate() const {
  if (in_channels == 0) throw ConfigError("must be >= 1", "in_channels");
  if (stem_channels == 0) throw ConfigError("must be >= 1", "stem_channels");
  if (stem_kernel == 0 || stem_kernel % 2 == 0) throw ConfigError("must be odd and >= 1", "stem_kernel");
  if (pool == 0) throw ConfigError("must be >= 1", "pool");
  if (blocks.empty()) throw ConfigError("need at least one residual block", "blocks");
  for (const BlockSpec& b : blocks)
    if (b.channels == 0 || b.stride == 0) throw ConfigError("channels and stride must be >= 1", "blocks");
  if (num_classes < 2) throw ConfigError("must be >= 2", "num_classes");
  if (!(eps > 0.0)) throw ConfigError("must be > 0", "eps");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("must lie in (0, 1]", "bn_momentum");
  std::size_t dims[3] = {depth, height, width};
  try {
    for (std::size_t a = 0; a < 3; ++a) {
      std::size_t d = conv_out_dim(dims[a], stem_kernel, stem_stride[a], stem_kernel / 2);
      d = conv_out_dim(d, pool, pool, 0);
      for (const BlockSpec& b : blocks) d = conv_out_dim(d, kBlockKernel, b.stride, kBlockKernel / 2);
      (void)d;
    }
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("input spatial dims too small for the stem and block strides (") + e.what() + ")",
                      "input_shape");
  }
}

std::string NetConfig::canonical() const {
  std::ostringstream os;
  os << "in=" << in_channels << ";dhw=" << depth << 'x' << height << 'x' << width << ";stem=" << stem_channels
     << ";k=" << stem_kernel << ";ss=" << stem_stride[0] << ',' << stem_stride[1] << ',' << stem_stride[2]
     << ";pool=" << pool << ";blocks=";
  for (const BlockSpec& b : blocks) os << b.channels << '/' << b.stride << ',';
  os << ";norm=" << to_string(norm_kind) << ";classes=" << num_classes;
  return os.str();
}

std::uint64_t NetConfig::digest() const { return fnv1a64(canonical()); }

Model::Model(NetConfig config, RngStream rng) : config_(std::move(config)) {
  config_.validate();
  const NetConfig& c = config_;
  const std::size_t s = c.stem_channels;
  stem_conv1_ = make_conv(rng.derive("stem.conv1"), c.in_channels, s, c.stem_kernel, c.stem_stride);
  stem_norm1_ = make_norm(s, c);
  stem_conv2_ = make_conv(rng.derive("stem.conv2"), s, s, kBlockKernel, {1, 1, 1});
  stem_norm2_ = make_norm(s, c);
  stem_conv3_ = make_conv(rng.derive("stem.conv3"), s, s, kBlockKernel, {1, 1, 1});
  std::size_t cin = s;
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    const BlockSpec& spec = c.blocks[i];
    RngStream brng = rng.derive("block").derive(i);
    const Triple stride{spec.stride, spec.stride, spec.stride};
    ResidualBlock b;
    b.conv1 = make_conv(brng.derive("conv1"), cin, spec.channels, kBlockKernel, stride);
    b.norm1 = make_norm(spec.channels, c);
    b.conv2 = make_conv(brng.derive("conv2"), spec.channels, spec.channels, kBlockKernel, {1, 1, 1});
    b.norm2 = make_norm(spec.channels, c);
    if (cin != spec.channels || spec.stride != 1)
      b.projection = make_conv(brng.derive("projection"), cin, spec.channels, 1, stride);
    blocks_.push_back(std::move(b));
    cin = spec.channels;
  }
  final_norm_ = make_norm(cin, c);
  fc_weight_ = Tensor({c.num_classes, cin});
  RngStream frng = rng.derive("fc");
  const double std = std::sqrt(1.0 / static_cast<double>(cin));
  for (double& v : fc_weight_.values()) v = frng.normal(0.0, std);
  fc_bias_ = Tensor({c.num_classes}, 0.0);
  fc_weight_.enable_grad();
  fc_bias_.enable_grad();
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  push_conv(out, stem_conv1_);
  push_norm(out, stem_norm1_);
  push_conv(out, stem_conv2_);
  push_norm(out, stem_norm2_);
  push_conv(out, stem_conv3_);
  for (ResidualBlock& b : blocks_) {
    push_conv(out, b.conv1);
    push_norm(out, b.norm1);
    push_conv(out, b.conv2);
    push_norm(out, b.norm2);
    if (b.projection) push_conv(out, *b.projection);
  }
  push_norm(out, final_norm_);
  out.push_back(&fc_weight_);
  out.push_back(&fc_bias_);
  return out;
}

std::vector<Tensor*> Model::state() {
  std::vector<Tensor*> out = parameters();
  push_stats(out, stem_norm1_);
  push_stats(out, stem_norm2_);
  for (ResidualBlock& b : blocks_) {
    push_stats(out, b.norm1);
    push_stats(out, b.norm2);
  }
  push_stats(out, final_norm_);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->numel();
  return n;
}

std::size_t Model::running_stat_buffers() const {
  std::size_t n = 0;
  auto count = [&](const NormLayer& l) { n += l.stats ? 2 : 0; };
  count(stem_norm1_);
  count(stem_norm2_);
  for (const ResidualBlock& b : blocks_) {
    count(b.norm1);
    count(b.norm2);
  }
  count(final_norm_);
  return n;
}

Var Model::conv(Tape& tape, ConvLayer& layer, Var x) {
  return conv3d(x, tape.leaf(layer.weight), tape.leaf(layer.bias), layer.params);
}

Var Model::norm(Tape& tape, NormLayer& layer, Var x, bool training) {
  Var g = tape.leaf(layer.gamma);
  Var b = tape.leaf(layer.beta);
  if (config_.norm_kind == NormKind::Instance) return instance_norm(x, g, b, config_.eps);
  return batch_norm(x, g, b, config_.eps, training, *layer.stats);
}

Var residual_block_forward(Tape& tape, Model& model, ResidualBlock& block, Var x, bool training) {
  Var h = relu(model.norm(tape, block.norm1, model.conv(tape, block.conv1, x), training));
  h = relu(model.norm(tape, block.norm2, model.conv(tape, block.conv2, h), training));
  Var skip = block.projection ? model.conv(tape, *block.projection, x) : x;
  return add(skip, h);
}

ForwardResult Model::forward(Tape& tape, Var batch, bool training) {
  const Shape& s = batch.shape();
  const NetConfig& c = config_;
  if (s.size() != 5 || s[1] != c.in_channels || s[2] != c.depth || s[3] != c.height || s[4] != c.width)
    throw DimensionError("model expects [N," + std::to_string(c.in_channels) + "," + std::to_string(c.depth) + "," +
                         std::to_string(c.height) + "," + std::to_string(c.width) + "], got " + shape_str(s));
  Var h = relu(norm(tape, stem_norm1_, conv(tape, stem_conv1_, batch), training));
  h = maxpool3d(h, {c.pool, c.pool, c.pool}, {c.pool, c.pool, c.pool});
  h = relu(norm(tape, stem_norm2_, conv(tape, stem_conv2_, h), training));
  h = conv(tape, stem_conv3_, h);
  for (ResidualBlock& b : blocks_) h = residual_block_forward(tape, *this, b, h, training);
  h = relu(norm(tape, final_norm_, h, training));
  Var pooled = global_avg_pool(h);
  ForwardResult out;
  out.logits = linear(pooled, tape.leaf(fc_weight_), tape.leaf(fc_bias_));
  out.embedding = l2_normalize_rows(pooled);
  return out;
}

std::vector<Tensor> Model::snapshot() {
  std::vector<Tensor> out;
  for (const Tensor* t : state()) out.emplace_back(t->shape(), t->values());
  return out;
}

void Model::restore(const std::vector<Tensor>& snap) {
  std::vector<Tensor*> st = state();
  if (snap.size() != st.size()) throw ContractError("snapshot tensor count does not match model");
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (snap[i].shape() != st[i]->shape()) throw ContractError("snapshot tensor shape does not match model");
    st[i]->values() = snap[i].values();
  }
}

Model build_model(const NetConfig& config, const RngStream& rng) { return Model(config, rng); }

Inference infer(Model& model, const Tensor& batch, bool training) {
  Tape tape(false);
  ForwardResult r = model.forward(tape, tape.constant(batch), training);
  return {r.logits.value(), r.embedding.value()};
}

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, 4);
  binary::write<std::uint32_t>(os, kCheckpointVersion);
  binary::write<std::uint64_t>(os, model.config().digest());
  const std::vector<Tensor*> st = model.state();
  binary::write<std::uint64_t>(os, st.size());
  for (const Tensor* t : st) {
    binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) binary::write<std::uint64_t>(os, d);
    for (double v : t->values()) binary::write<double>(os, v);
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

void load_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint file (bad magic): " + path.string());
  const auto version = binary::read<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto digest = binary::read<std::uint64_t>(is, "config digest");
  if (digest != model.config().digest()) throw FormatError("checkpoint was written for a different network config");
  std::vector<Tensor*> st = model.state();
  const auto count = binary::read<std::uint64_t>(is, "tensor count");
  if (count != st.size()) throw FormatError("checkpoint tensor count does not match model");
  for (Tensor* t : st) {
    const auto rank = binary::read<std::uint32_t>(is, "tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = binary::read<std::uint64_t>(is, "tensor dims");
    if (shape != t->shape()) throw FormatError("checkpoint tensor shape " + shape_str(shape) + " does not match model");
    for (double& v : t->values()) v = binary::read<double>(is, "tensor payload");
  }
}

}  // namespace kneedg

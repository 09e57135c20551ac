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

#ifndef KNEEDG_NETWORK_HPP_
#define KNEEDG_NETWORK_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kneedg/autodiff.hpp"
#include "kneedg/ops.hpp"
#include "kneedg/rng.hpp"
#include "kneedg/tensor.hpp"

namespace kneedg {

enum class NormKind { Batch, Instance };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& name);

struct BlockSpec {
  std::size_t channels;
  std::size_t stride;
};

struct NetConfig {
  std::size_t in_channels = 1;
  std::size_t depth = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t stem_channels = 8;
  std::size_t stem_kernel = 3;
  Triple stem_stride{1, 1, 1};
  std::size_t pool = 2;
  std::vector<BlockSpec> blocks{{8, 1}, {8, 1}, {16, 2}, {16, 1}, {32, 2}, {32, 1}, {64, 2}, {64, 1}};
  NormKind norm_kind = NormKind::Batch;
  double eps = 1e-5;
  double bn_momentum = 0.1;
  std::size_t num_classes = 2;

  // Throws ConfigError naming the field at fault, including inputs too small
  // to survive the stem and the strided blocks.
  void validate() const;
  // Stable textual form; the checkpoint header stores its FNV-1a digest.
  std::string canonical() const;
  std::uint64_t digest() const;
};

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  Conv3dParams params;
};

struct NormLayer {
  Tensor gamma;
  Tensor beta;
  std::optional<BatchNormState> stats;  // present only for NormKind::Batch
};

struct ResidualBlock {
  ConvLayer conv1;
  NormLayer norm1;
  ConvLayer conv2;
  NormLayer norm2;
  std::optional<ConvLayer> projection;
};

struct ForwardResult {
  Var logits;     // [N, num_classes], pre-softmax
  Var embedding;  // [N, F], L2-normalized global-average-pool features
};

// Conv-Norm-ReLU-MaxPool-Conv-Norm-ReLU-Conv stem, residual stack, final
// Norm-ReLU, global average pooling and a fully connected classifier.
class Model {
 public:
  Model(NetConfig config, RngStream rng);

  const NetConfig& config() const { return config_; }

  // Trainable tensors in declaration order.
  std::vector<Tensor*> parameters();
  // Parameters followed by batch-norm running statistics; what a checkpoint stores.
  std::vector<Tensor*> state();
  std::size_t parameter_count();
  std::size_t running_stat_buffers() const;

  ForwardResult forward(Tape& tape, Var batch, bool training);

  std::vector<Tensor> snapshot();
  void restore(const std::vector<Tensor>& snapshot);

  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  std::vector<ResidualBlock>& blocks() { return blocks_; }
  ConvLayer& stem_conv1() { return stem_conv1_; }
  NormLayer& stem_norm1() { return stem_norm1_; }

 private:
  Var norm(Tape& tape, NormLayer& layer, Var x, bool training);
  Var conv(Tape& tape, ConvLayer& layer, Var x);

  NetConfig config_;
  ConvLayer stem_conv1_;
  NormLayer stem_norm1_;
  ConvLayer stem_conv2_;
  NormLayer stem_norm2_;
  ConvLayer stem_conv3_;
  std::vector<ResidualBlock> blocks_;
  NormLayer final_norm_;
  Tensor fc_weight_;
  Tensor fc_bias_;

  friend Var residual_block_forward(Tape& tape, Model& model, ResidualBlock& block, Var x, bool training);
};

Model build_model(const NetConfig& config, const RngStream& rng);

// out = skip(x) + relu(norm(conv(relu(norm(conv(x))))))
Var residual_block_forward(Tape& tape, Model& model, ResidualBlock& block, Var x, bool training);

// Runs forward on a tape that records nothing and returns plain tensors.
struct Inference {
  Tensor logits;
  Tensor embedding;
};
Inference infer(Model& model, const Tensor& batch, bool training = false);

// Versioned little-endian checkpoint: magic "DGCK", u32 version, u64 config
// digest, u64 tensor count, then per tensor u32 rank, u64 dims, f64 payload.
void save_checkpoint(Model& model, const std::filesystem::path& path);
void load_checkpoint(Model& model, const std::filesystem::path& path);

}  // namespace kneedg

#endif  // KNEEDG_NETWORK_HPP_

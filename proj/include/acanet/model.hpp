// Copyright (c) 2026 ACA-Net C++ contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ACANET_MODEL_HPP
#define ACANET_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "acanet/features.hpp"
#include "acanet/ops.hpp"
#include "acanet/tensor.hpp"

namespace acanet {

// Embedding extractor layout: one TDNN block, one aggregation block built
// from a cross-attention sub-block plus n_latent_blocks self-attention
// sub-blocks, and a final channel-collapsing convolution. A fixed C x E
// latent queries the variable-length feature sequence, so the embedding
// size never depends on the input length.
struct ModelConfig {
  std::size_t channels = 256;        // C
  std::size_t embedding_size = 512;  // E
  std::size_t ffn_size = 1024;
  std::size_t n_latent_blocks = 3;   // j
  std::size_t num_heads = 4;         // h
  double dropout_p = 0.2;
  std::size_t n_filters = 80;        // C0, filterbank channels
  bool weight_sharing = false;       // one parameter set for all latent sub-blocks
  bool use_posenc = true;
  bool use_mla_concat = true;        // concatenate latent sub-block outputs
  bool mla_depthwise = true;         // aggregation conv: groups=C; false = dense

  void validate() const;
};

struct LatentInitSpec {
  double mean = 0.0;
  double stddev = 0.02;
  double lower = -2.0;
  double upper = 2.0;
};

// The C x E state refined by the aggregation block.
using LatentState = Tensor;

struct SubBlockParams {
  MhaParams mha;
  Tensor norm1_gamma, norm1_beta;
  Tensor norm2_gamma, norm2_beta;
  Tensor ffn1_w, ffn1_b;  // C x F, F
  Tensor ffn2_w, ffn2_b;  // F x C, C
};

struct AcaNetParams {
  ModelConfig cfg;
  Tensor latent;  // C x E, learnable initial latent
  Tensor tdnn_w, tdnn_b;
  BatchNormState tdnn_bn;
  SubBlockParams aca;
  // With weight_sharing, all entries hold the same tensors: updating one
  // updates all of them.
  std::vector<SubBlockParams> latent_blocks;
  Tensor mla_w, mla_b;
  BatchNormState mla_bn;
  Tensor head_w, head_b;  // 1 x C, 1

  // Learnable parameters, deduplicated under weight sharing, in a stable
  // order. Names are stable across runs and versions of the same config.
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  // Non-learnable state (batch-norm running statistics).
  std::vector<std::pair<std::string, Tensor>> named_buffers() const;
  void load_buffer(const std::string& name, const Tensor& t);
  std::size_t n_scalars() const;
};

// Truncated-normal C x E latent via rejection sampling; deterministic per
// seed, every sample within [spec.lower, spec.upper].
LatentState init_latent(const ModelConfig& cfg, const LatentInitSpec& spec, std::uint64_t seed);

AcaNetParams init_params(const ModelConfig& cfg, std::uint64_t seed,
                         const LatentInitSpec& latent_spec = {});

// Exact number of learnable scalars for a config, by closed-form sums.
std::size_t count_params(const ModelConfig& cfg);

// Named layers with their scalar counts, summing to count_params(cfg).
std::vector<std::pair<std::string, std::size_t>> count_params_by_layer(const ModelConfig& cfg);

// Variants: "no_mla", "no_latent_blocks", "no_posenc", "weight_sharing".
ModelConfig build_ablation(const ModelConfig& base, const std::string& variant);

// Forward pieces. `padding_mask` (length T, true = padded) removes frames
// from attention and from batch-norm statistics.
Tensor tdnn_block(Graph& g, const Tensor& feats, AcaNetParams& params, Mode mode,
                  const std::vector<bool>* padding_mask = nullptr);

LatentState aca_sub_block(Graph& g, const LatentState& latent, const Tensor& feats,
                          const Tensor& posenc, SubBlockParams& params,
                          const ModelConfig& cfg, Mode mode, Rng* rng = nullptr,
                          const std::vector<bool>* padding_mask = nullptr);

LatentState latent_sub_block(Graph& g, const LatentState& latent, SubBlockParams& params,
                             const ModelConfig& cfg, Mode mode, Rng* rng = nullptr);

// The full aggregation block: cross-attention sub-block, latent sub-blocks,
// channel concatenation, kernel-1 conv back to C channels, batch norm.
LatentState mla_block(Graph& g, const LatentState& latent0, const Tensor& feats,
                      AcaNetParams& params, Mode mode, Rng* rng = nullptr,
                      const std::vector<bool>* padding_mask = nullptr);

// Full pipeline on a C0 x T feature tensor; returns the length-E embedding.
Tensor embed_features(Graph& g, const Tensor& feats, AcaNetParams& params, Mode mode,
                      Rng* rng = nullptr, const std::vector<bool>* padding_mask = nullptr);

// Convenience wrapper building its own graph (no gradients kept).
Tensor embed(const FeatureMatrix& feats, AcaNetParams& params, Mode mode = Mode::kEval);

// Checkpoints: parameter names -> shape + little-endian f32 payload, plus
// the config and a format version. load(save(p)) == p bitwise whenever p's
// values are f32-representable (always true for loaded or freshly
// initialized parameters).
void save_checkpoint(const std::filesystem::path& path, const AcaNetParams& params);
AcaNetParams load_checkpoint(const std::filesystem::path& path);

}  // namespace acanet

#endif  // ACANET_MODEL_HPP

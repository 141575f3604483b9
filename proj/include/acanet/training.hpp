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

#ifndef ACANET_TRAINING_HPP
#define ACANET_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "acanet/data.hpp"
#include "acanet/features.hpp"
#include "acanet/model.hpp"
#include "acanet/ops.hpp"

namespace acanet {

// Additive-angular-margin classification head: class weight rows are
// renormalized to unit length on every loss evaluation.
struct AamHead {
  Tensor weights;  // n_classes x E, learnable
  double margin = 0.2;
  double scale = 30.0;

  static AamHead init(std::size_t n_classes, std::size_t embedding_size, double margin,
                      double scale, Rng& rng);
  std::size_t n_classes() const { return weights.rows(); }
};

// Row-normalization and the margined cosine logits, exposed for reuse and
// gradient checking. normalize_rows guards against zero rows with a 1e-12
// floor on the norm.
Tensor normalize_rows(Graph& g, const Tensor& x);

// logits = s * cos(theta + m) for the true class, s * cos(theta) otherwise,
// theta from an arccos clamped to [-1 + 1e-7, 1 - 1e-7]; then mean
// cross-entropy over the batch.
Tensor aam_loss(Graph& g, const Tensor& embeddings, const std::vector<std::size_t>& labels,
                const AamHead& head);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

// One first/second-moment update with bias correction. `grads` runs
// parallel to `params` (same order and shapes); the state is lazily sized
// on the first call and must keep matching afterwards.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr);

struct CyclicalLrSchedule {
  double base_lr = 1e-7;
  double max_lr = 1e-2;
  std::size_t step_size = 1000;  // steps per half cycle
};

// Triangular wave: base at step 0, max at step_size, base again at
// 2*step_size, exactly periodic from then on.
double lr_at(const CyclicalLrSchedule& schedule, std::size_t step);

struct TrainBatch {
  Tensor features;  // B x C0 x T_max, zero right-padding
  std::vector<std::size_t> lengths;
  std::vector<std::vector<bool>> masks;  // true = padded suffix position
  std::vector<std::size_t> labels;

  std::size_t batch_size() const { return lengths.size(); }
  std::size_t t_max() const { return features.shape()[2]; }
  // 2-D C0 x T_max copy of one item.
  Tensor item_features(std::size_t i) const;
};

TrainBatch pad_and_mask(const std::vector<FeatureMatrix>& items,
                        const std::vector<std::size_t>& labels);

struct TrainOptions {
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  CyclicalLrSchedule lr;
  double crop_s = 2.0;  // random training crop; full length at eval
  double margin = 0.2;
  double aam_scale = 30.0;
  std::size_t dev_trial_pairs = 200;
  std::size_t expected_sample_rate = 8000;
  std::filesystem::path out_dir;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct FitResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_loss;
  double best_dev_eer = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_speakers = 0;
};

// Full training loop: features -> embeddings -> margin loss -> backprop ->
// Adam with the cyclical schedule. Writes metrics.jsonl (one record per
// step: step, lr, loss) and keeps the checkpoint with the best dev EER
// (every epoch's checkpoint when no dev manifest is given). Deterministic
// for a fixed seed: data order, crops, dropout and init all derive from it.
FitResult fit(const std::filesystem::path& train_manifest_path,
              const std::filesystem::path& dev_manifest_path,  // empty = no dev selection
              const ModelConfig& cfg, const TrainOptions& opts, std::uint64_t seed);

}  // namespace acanet

#endif  // ACANET_TRAINING_HPP

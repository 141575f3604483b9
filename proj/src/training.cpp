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

#include "acanet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace acanet {

AamHead AamHead::init(std::size_t n_classes, std::size_t embedding_size, double margin,
                      double scale, Rng& rng) {
  if (n_classes < 2) {
    throw std::invalid_argument("AamHead: need at least 2 classes, got " +
                                std::to_string(n_classes));
  }
  AamHead head;
  head.margin = margin;
  head.scale = scale;
  const double bound = 1.0 / std::sqrt(static_cast<double>(embedding_size));
  head.weights = Tensor({n_classes, embedding_size}, 0.0, true);
  for (double& v : head.weights.values()) {
    v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
  }
  return head;
}

Tensor normalize_rows(Graph& g, const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m, n}, 0.0, x.requires_grad());
  std::vector<double> norms(m);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += xv[i * n + j] * xv[i * n + j];
    norms[i] = std::max(std::sqrt(sq), 1e-12);
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] / norms[i];
  }
  if (out.requires_grad()) {
    g.record("normalize_rows", {x}, out, [x, out, m, n, norms = std::move(norms)](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& dx = gr.grad_buffer(x);
      auto yv = out.values();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * yv[i * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          dx[i * n + j] += (dy[i * n + j] - yv[i * n + j] * dot) / norms[i];
        }
      }
    });
  }
  return out;
}

namespace {

constexpr double kCosClamp = 1.0 - 1e-7;

// Replaces the true-class cosine c with cos(arccos(c) + m), the cosine
// clamped away from +-1 so the derivative stays finite.
Tensor aam_margin_true_class(Graph& g, const Tensor& cosines,
                             const std::vector<std::size_t>& labels, double margin) {
  const std::size_t b = cosines.rows(), n = cosines.cols();
  const double cos_m = std::cos(margin), sin_m = std::sin(margin);
  Tensor out(cosines.shape(), 0.0, cosines.requires_grad());
  auto cv = cosines.values();
  auto ov = out.values();
  std::copy(cv.begin(), cv.end(), ov.begin());
  for (std::size_t i = 0; i < b; ++i) {
    const double c = std::clamp(cv[i * n + labels[i]], -kCosClamp, kCosClamp);
    ov[i * n + labels[i]] = c * cos_m - std::sqrt(1.0 - c * c) * sin_m;
  }
  if (out.requires_grad()) {
    g.record("aam_margin", {cosines}, out,
             [cosines, out, labels, cos_m, sin_m, b, n](Graph& gr) {
               const auto& dy = *gr.find_grad(out);
               auto& dc = gr.grad_buffer(cosines);
               auto cv2 = cosines.values();
               for (std::size_t i = 0; i < b; ++i) {
                 for (std::size_t j = 0; j < n; ++j) {
                   const std::size_t idx = i * n + j;
                   if (j != labels[i]) {
                     dc[idx] += dy[idx];
                     continue;
                   }
                   const double raw = cv2[idx];
                   if (raw <= -kCosClamp || raw >= kCosClamp) continue;  // clamped flat
                   const double dz = cos_m + raw * sin_m / std::sqrt(1.0 - raw * raw);
                   dc[idx] += dy[idx] * dz;
                 }
               }
             });
  }
  return out;
}

Tensor cross_entropy_mean(Graph& g, const Tensor& logits,
                          const std::vector<std::size_t>& labels) {
  const std::size_t b = logits.rows(), n = logits.cols();
  auto lv = logits.values();
  double total = 0.0;
  std::vector<double> softmax_vals(b * n);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = lv[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, lv[i * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      softmax_vals[i * n + j] = std::exp(lv[i * n + j] - mx);
      sum += softmax_vals[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) softmax_vals[i * n + j] /= sum;
    const double lse = mx + std::log(sum);
    total += lse - lv[i * n + labels[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(b), logits.requires_grad());
  if (out.requires_grad()) {
    g.record("cross_entropy_mean", {logits}, out,
             [logits, out, labels, b, n, softmax_vals = std::move(softmax_vals)](Graph& gr) {
               const double dy = (*gr.find_grad(out))[0] / static_cast<double>(b);
               auto& dl = gr.grad_buffer(logits);
               for (std::size_t i = 0; i < b; ++i) {
                 for (std::size_t j = 0; j < n; ++j) {
                   double d = softmax_vals[i * n + j];
                   if (j == labels[i]) d -= 1.0;
                   dl[i * n + j] += dy * d;
                 }
               }
             });
  }
  return out;
}

}  // namespace

Tensor aam_loss(Graph& g, const Tensor& embeddings, const std::vector<std::size_t>& labels,
                const AamHead& head) {
  if (embeddings.ndim() != 2 || embeddings.cols() != head.weights.cols()) {
    detail::throw_shape_error("aam_loss", "embeddings " + shape_str(embeddings.shape()) +
                                              " vs class weights " +
                                              shape_str(head.weights.shape()));
  }
  if (labels.size() != embeddings.rows()) {
    throw std::invalid_argument("aam_loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(embeddings.rows()) + " embeddings");
  }
  for (std::size_t l : labels) {
    if (l >= head.n_classes()) {
      throw std::invalid_argument("aam_loss: label " + std::to_string(l) + " out of range for " +
                                  std::to_string(head.n_classes()) + " classes");
    }
  }
  Tensor ne = normalize_rows(g, embeddings);
  Tensor nw = normalize_rows(g, head.weights);
  Tensor cosines = matmul(g, ne, transpose(g, nw));  // B x n_classes
  if (head.margin != 0.0) {
    cosines = aam_margin_true_class(g, cosines, labels, head.margin);
  }
  Tensor logits = scale(g, cosines, head.scale);
  return cross_entropy_mean(g, logits, labels);
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params vs " +
                                std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                " params, got " + std::to_string(params.size()));
  }
  state.t += 1;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      detail::throw_shape_error("adam_step", "param " + shape_str(params[i].shape()) +
                                                 " vs grad " + shape_str(grads[i].shape()));
    }
    if (state.m[i].size() != params[i].size()) {
      throw std::invalid_argument("adam_step: state size mismatch at param " + std::to_string(i));
    }
    auto pv = params[i].values();
    auto gv = grads[i].values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < pv.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * gv[j];
      v[j] = b2 * v[j] + (1.0 - b2) * gv[j] * gv[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      pv[j] -= lr * mhat / (std::sqrt(vhat) + state.config.epsilon);
    }
  }
}

double lr_at(const CyclicalLrSchedule& schedule, std::size_t step) {
  if (schedule.step_size == 0) throw std::invalid_argument("lr_at: step_size must be positive");
  const std::size_t period = 2 * schedule.step_size;
  const std::size_t phase = step % period;
  const std::size_t up = phase <= schedule.step_size ? phase : period - phase;
  const double frac = static_cast<double>(up) / static_cast<double>(schedule.step_size);
  return schedule.base_lr + (schedule.max_lr - schedule.base_lr) * frac;
}

Tensor TrainBatch::item_features(std::size_t i) const {
  const std::size_t c0 = features.shape()[1], tmax = features.shape()[2];
  Tensor item({c0, tmax});
  auto fv = features.values();
  auto iv = item.values();
  std::copy(fv.begin() + i * c0 * tmax, fv.begin() + (i + 1) * c0 * tmax, iv.begin());
  return item;
}

TrainBatch pad_and_mask(const std::vector<FeatureMatrix>& items,
                        const std::vector<std::size_t>& labels) {
  if (items.empty()) throw std::invalid_argument("pad_and_mask: empty batch");
  if (labels.size() != items.size()) {
    throw std::invalid_argument("pad_and_mask: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(items.size()) + " items");
  }
  const std::size_t c0 = items[0].n_filters();
  std::size_t t_max = 0;
  for (const FeatureMatrix& f : items) {
    if (f.n_filters() != c0) {
      throw std::invalid_argument("pad_and_mask: inconsistent filter counts in batch");
    }
    t_max = std::max(t_max, f.n_frames());
  }
  TrainBatch batch;
  batch.features = Tensor({items.size(), c0, t_max});
  batch.labels = labels;
  auto bv = batch.features.values();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::size_t t = items[i].n_frames();
    batch.lengths.push_back(t);
    std::vector<bool> mask(t_max, false);
    for (std::size_t l = t; l < t_max; ++l) mask[l] = true;
    batch.masks.push_back(std::move(mask));
    auto fv = items[i].values.values();
    for (std::size_t ch = 0; ch < c0; ++ch) {
      for (std::size_t l = 0; l < t; ++l) {
        bv[i * c0 * t_max + ch * t_max + l] = fv[ch * t + l];
      }
    }
  }
  return batch;
}

namespace {

struct LoadedUtterance {
  ManifestEntry entry;
  FeatureMatrix features;
  std::size_t label = 0;
};

std::vector<LoadedUtterance> load_split(const std::filesystem::path& manifest_path,
                                        const ModelConfig& cfg, const TrainOptions& opts,
                                        std::map<std::string, std::size_t>* label_map) {
  const std::vector<ManifestEntry> manifest = load_manifest(manifest_path);
  std::vector<LoadedUtterance> out;
  out.reserve(manifest.size());
  FbankConfig fb;
  fb.n_filters = cfg.n_filters;
  for (const ManifestEntry& e : manifest) {
    WaveBuffer w = read_wav(resolve_audio_path(manifest_path, e));
    if (w.sample_rate != opts.expected_sample_rate) {
      throw std::runtime_error("fit: " + e.utt_id + " has sample rate " +
                               std::to_string(w.sample_rate) + ", expected " +
                               std::to_string(opts.expected_sample_rate) +
                               " (resampling is out of scope)");
    }
    LoadedUtterance u;
    u.entry = e;
    u.features = log_mel_fbank(w, fb);
    if (label_map) {
      auto [it, inserted] = label_map->emplace(e.speaker_id, label_map->size());
      u.label = it->second;
    }
    out.push_back(std::move(u));
  }
  return out;
}

FeatureMatrix crop_features(const FeatureMatrix& f, std::size_t crop_frames, Rng& rng) {
  if (crop_frames == 0 || f.n_frames() <= crop_frames) return f;
  const std::size_t start = rng.below(f.n_frames() - crop_frames + 1);
  const std::size_t c0 = f.n_filters(), t = f.n_frames();
  FeatureMatrix out;
  out.frame_hop_ms = f.frame_hop_ms;
  out.frame_win_ms = f.frame_win_ms;
  out.values = Tensor({c0, crop_frames});
  auto src = f.values.values();
  auto dst = out.values.values();
  for (std::size_t ch = 0; ch < c0; ++ch) {
    std::copy(src.begin() + ch * t + start, src.begin() + ch * t + start + crop_frames,
              dst.begin() + ch * crop_frames);
  }
  return out;
}

double dev_eer(const std::vector<LoadedUtterance>& dev, const TrialList& trials,
               AcaNetParams& params, const DcfParams& dcf) {
  std::map<std::string, std::vector<double>> embeddings;
  for (const LoadedUtterance& u : dev) {
    Tensor e = embed(u.features, params, Mode::kEval);
    embeddings.emplace(u.entry.utt_id, std::vector<double>(e.values().begin(), e.values().end()));
  }
  return evaluate(trials, embeddings, dcf).eer;
}

}  // namespace

FitResult fit(const std::filesystem::path& train_manifest_path,
              const std::filesystem::path& dev_manifest_path, const ModelConfig& cfg,
              const TrainOptions& opts, std::uint64_t seed) {
  cfg.validate();
  if (opts.out_dir.empty()) throw std::invalid_argument("fit: out_dir not set");
  std::filesystem::create_directories(opts.out_dir);

  Rng root(seed);
  std::map<std::string, std::size_t> label_map;
  std::vector<LoadedUtterance> train = load_split(train_manifest_path, cfg, opts, &label_map);
  if (train.empty()) throw std::invalid_argument("fit: empty training manifest");
  if (label_map.size() < 2) {
    throw std::invalid_argument("fit: training data has " + std::to_string(label_map.size()) +
                                " speaker(s); the margin loss needs at least 2");
  }

  std::vector<LoadedUtterance> dev;
  TrialList dev_trials;
  if (!dev_manifest_path.empty()) {
    dev = load_split(dev_manifest_path, cfg, opts, nullptr);
    std::vector<ManifestEntry> dev_entries;
    for (const LoadedUtterance& u : dev) dev_entries.push_back(u.entry);
    // Clamp the request to what the dev split can actually provide.
    std::map<std::string, std::size_t> per_spk;
    for (const ManifestEntry& e : dev_entries) per_spk[e.speaker_id]++;
    std::size_t possible_targets = 0;
    for (const auto& [spk, n] : per_spk) possible_targets += n * (n - 1) / 2;
    const std::size_t n_pairs =
        std::min(opts.dev_trial_pairs, std::max<std::size_t>(2, 2 * possible_targets));
    if (possible_targets > 0 && per_spk.size() >= 2) {
      dev_trials = build_trials(dev_entries, n_pairs, 0.5, root.fork("dev_trials").next_u64());
    }
  }

  AcaNetParams params = init_params(cfg, root.fork("init").next_u64());
  Rng head_rng = root.fork("head");
  AamHead head = AamHead::init(label_map.size(), cfg.embedding_size, opts.margin,
                               opts.aam_scale, head_rng);

  std::vector<Tensor> train_params;
  for (const auto& [name, t] : params.named_params()) train_params.push_back(t);
  train_params.push_back(head.weights);

  AdamState adam;
  Rng train_rng = root.fork("train_loop");
  const std::size_t crop_frames = static_cast<std::size_t>(
      std::lround(opts.crop_s * 1000.0 / train[0].features.frame_hop_ms));

  FitResult result;
  result.n_speakers = label_map.size();
  result.checkpoint_path = opts.out_dir / "checkpoint.acnt";
  result.metrics_path = opts.out_dir / "metrics.jsonl";
  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw std::runtime_error("fit: cannot open " + result.metrics_path.string());

  double best_eer = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    train_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += opts.batch_size) {
      const std::size_t end = std::min(begin + opts.batch_size, order.size());
      std::vector<FeatureMatrix> feats;
      std::vector<std::size_t> labels;
      for (std::size_t i = begin; i < end; ++i) {
        feats.push_back(crop_features(train[order[i]].features, crop_frames, train_rng));
        labels.push_back(train[order[i]].label);
      }
      TrainBatch batch = pad_and_mask(feats, labels);

      Graph g;
      std::vector<Tensor> embeddings;
      for (std::size_t i = 0; i < batch.batch_size(); ++i) {
        Tensor item = batch.item_features(i);
        embeddings.push_back(embed_features(g, item, params, Mode::kTrain, &train_rng,
                                            &batch.masks[i]));
      }
      Tensor emb = stack_rows(g, embeddings);
      Tensor loss = aam_loss(g, emb, batch.labels, head);
      g.backward(loss);

      std::vector<Tensor> grads;
      grads.reserve(train_params.size());
      for (const Tensor& p : train_params) {
        grads.push_back(g.has_grad(p) ? g.grad(p) : Tensor(p.shape(), 0.0));
      }
      const double lr = lr_at(opts.lr, step);
      adam_step(train_params, grads, adam, lr);

      const double loss_v = loss.item();
      result.steps.push_back({step, lr, loss_v});
      nlohmann::json rec = {{"step", step}, {"lr", lr}, {"loss", loss_v}};
      metrics << rec.dump() << '\n';
      epoch_loss += loss_v;
      ++epoch_steps;
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_steps)));

    if (!dev_trials.empty()) {
      const double eer = dev_eer(dev, dev_trials, params, DcfParams{});
      nlohmann::json rec = {{"epoch", epoch}, {"dev_eer", eer}};
      metrics << rec.dump() << '\n';
      if (eer < best_eer) {
        best_eer = eer;
        save_checkpoint(result.checkpoint_path, params);
      }
    } else {
      save_checkpoint(result.checkpoint_path, params);
    }
  }
  metrics.flush();
  if (!dev_trials.empty()) result.best_dev_eer = best_eer;
  return result;
}

}  // namespace acanet

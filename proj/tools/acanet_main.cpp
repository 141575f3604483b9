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

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acanet/config.hpp"
#include "acanet/container.hpp"
#include "acanet/data.hpp"
#include "acanet/metrics.hpp"
#include "acanet/model.hpp"
#include "acanet/training.hpp"

namespace {

using namespace acanet;

// Loads the run configuration: --config wins, otherwise
// $ACANET_CONFIG_DIR/default.cfg when present, otherwise built-in defaults.
RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) {
    cfg = RunConfig::load(config_path);
  } else if (const char* dir = std::getenv("ACANET_CONFIG_DIR")) {
    const std::filesystem::path candidate = std::filesystem::path(dir) / "default.cfg";
    if (std::filesystem::exists(candidate)) cfg = RunConfig::load(candidate);
  }
  for (const std::string& o : overrides) cfg.apply_override(o);
  return cfg;
}

int cmd_gen_data(const std::string& out_dir, std::size_t speakers, std::size_t utts,
                 double duration, std::size_t rate, std::uint64_t seed,
                 std::size_t trial_pairs) {
  CorpusConfig cc;
  cc.n_speakers = speakers;
  cc.utts_per_speaker = utts;
  cc.duration_s = duration;
  cc.sample_rate = rate;
  const CorpusPaths paths = generate_corpus(out_dir, cc, seed);

  Rng trial_rng = Rng(seed).fork("cli_trials");
  for (const auto& [name, manifest_path] :
       {std::pair<std::string, std::filesystem::path>{"test", paths.test_manifest},
        std::pair<std::string, std::filesystem::path>{"dev", paths.dev_manifest}}) {
    const auto manifest = load_manifest(manifest_path);
    std::map<std::string, std::size_t> per_spk;
    for (const auto& e : manifest) per_spk[e.speaker_id]++;
    std::size_t possible = 0;
    for (const auto& [spk, n] : per_spk) possible += n * (n - 1) / 2;
    if (per_spk.size() < 2 || possible == 0) continue;
    const std::size_t n_pairs = std::min(trial_pairs, 2 * possible);
    const TrialList trials = build_trials(manifest, n_pairs, 0.5, trial_rng.next_u64());
    const std::filesystem::path trial_path = paths.root / (name + ".trials");
    save_trials(trial_path, trials);
    std::cout << name << " trials: " << trial_path.string() << " (" << trials.size()
              << " pairs)\n";
  }
  std::cout << "manifest: " << paths.all_manifest.string() << '\n'
            << "train manifest: " << paths.train_manifest.string() << '\n'
            << "dev manifest: " << paths.dev_manifest.string() << '\n'
            << "test manifest: " << paths.test_manifest.string() << '\n';
  return 0;
}

int cmd_params(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& variant) {
  RunConfig cfg = resolve_config(config_path, overrides);
  ModelConfig model = cfg.model;
  if (!variant.empty()) model = build_ablation(model, variant);
  model.validate();
  std::size_t total = 0;
  for (const auto& [name, n] : count_params_by_layer(model)) {
    std::cout << std::left << std::setw(28) << name << std::right << std::setw(12) << n << '\n';
    total += n;
  }
  std::cout << std::left << std::setw(28) << "total" << std::right << std::setw(12) << total
            << '\n';
  if (total != count_params(model)) {
    throw std::logic_error("parameter count mismatch against closed form");
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& variant, const std::string& out_dir, std::int64_t seed_flag) {
  RunConfig cfg = resolve_config(config_path, overrides);
  if (seed_flag >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed_flag);
  ModelConfig model = cfg.model;
  if (!variant.empty()) model = build_ablation(model, variant);
  model.validate();
  if (cfg.data.train_manifest.empty()) {
    throw std::runtime_error("train: data.train_manifest is not set (use --set or a config file)");
  }

  std::filesystem::create_directories(out_dir);
  RunConfig used = cfg;
  used.model = model;
  used.save(std::filesystem::path(out_dir) / "config.cfg");

  std::cout << "parameters: " << count_params(model) << '\n';
  const FitResult result =
      fit(cfg.data.train_manifest,
          cfg.data.dev_manifest.empty() ? std::filesystem::path()
                                        : std::filesystem::path(cfg.data.dev_manifest),
          model, cfg.train_options(out_dir), cfg.train.seed);
  std::cout << "checkpoint: " << result.checkpoint_path.string() << '\n'
            << "metrics: " << result.metrics_path.string() << '\n';
  if (!std::isnan(result.best_dev_eer)) {
    std::cout << "best dev EER: " << std::fixed << std::setprecision(2)
              << 100.0 * result.best_dev_eer << "%\n";
  }
  return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& manifest_path,
              const std::string& out_path) {
  AcaNetParams params = load_checkpoint(checkpoint);
  const auto manifest = load_manifest(manifest_path);
  ArrayContainer out;
  out.set_meta("format", "acanet-embeddings");
  out.set_meta("embedding_size", std::to_string(params.cfg.embedding_size));
  FbankConfig fb;
  fb.n_filters = params.cfg.n_filters;
  for (const ManifestEntry& e : manifest) {
    const WaveBuffer w = read_wav(resolve_audio_path(manifest_path, e));
    const FeatureMatrix feats = log_mel_fbank(w, fb);
    Tensor emb = embed(feats, params, Mode::kEval);
    out.add(e.utt_id, emb);
  }
  save_container(out_path, out);
  std::cout << "wrote " << manifest.size() << " embeddings to " << out_path << '\n';
  return 0;
}

int cmd_score(const std::string& embeddings_path, const std::string& trials_path,
              const std::string& report_path, const std::string& config_path,
              const std::vector<std::string>& overrides) {
  RunConfig cfg = resolve_config(config_path, overrides);
  const ArrayContainer c = load_container(embeddings_path);
  std::map<std::string, std::vector<double>> embeddings;
  for (const auto& [name, t] : c.arrays) {
    embeddings.emplace(name, std::vector<double>(t.values().begin(), t.values().end()));
  }
  const TrialList trials = load_trials(trials_path);
  const EvalReport report = evaluate(trials, embeddings, cfg.dcf_params());
  save_report_json(report_path, report);
  std::cout << "EER " << std::fixed << std::setprecision(2) << 100.0 * report.eer << "% minDCF "
            << std::setprecision(3) << report.min_dcf << '\n';
  std::cout << "report: " << report_path << '\n';
  return 0;
}

int cmd_features(const std::string& manifest_path, const std::string& out_path,
                 std::size_t n_filters) {
  const auto manifest = load_manifest(manifest_path);
  ArrayContainer out;
  out.set_meta("format", "acanet-features");
  FbankConfig fb;
  fb.n_filters = n_filters;
  for (const ManifestEntry& e : manifest) {
    const WaveBuffer w = read_wav(resolve_audio_path(manifest_path, e));
    out.add(e.utt_id, log_mel_fbank(w, fb).values);
  }
  save_container(out_path, out);
  std::cout << "wrote " << manifest.size() << " feature matrices to " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speaker embedding toolkit: asymmetric cross attention extractor"};
  app.require_subcommand(1);

  std::string config_path, variant, out_dir = "train_out";
  std::vector<std::string> overrides;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus with manifests and trials");
  std::string gen_out;
  std::size_t gen_speakers = 12, gen_utts = 20, gen_rate = 8000, gen_pairs = 200;
  double gen_duration = 2.0;
  std::uint64_t gen_seed = 42;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--speakers", gen_speakers, "number of speakers");
  gen->add_option("--utts", gen_utts, "utterances per speaker");
  gen->add_option("--duration", gen_duration, "utterance length in seconds");
  gen->add_option("--rate", gen_rate, "sample rate in Hz");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--trial-pairs", gen_pairs, "verification pairs per split");

  // train
  auto* train = app.add_subcommand("train", "train the embedding extractor");
  std::int64_t train_seed = -1;
  train->add_option("--config", config_path, "run configuration file");
  train->add_option("--set", overrides, "override, section.key=value");
  train->add_option("--variant", variant, "ablation: no_mla | no_latent_blocks | no_posenc | weight_sharing");
  train->add_option("--out", out_dir, "output directory (checkpoint, metrics, config)");
  train->add_option("--seed", train_seed, "overrides train.seed");

  // embed
  auto* emb = app.add_subcommand("embed", "extract embeddings for a manifest");
  std::string emb_ckpt, emb_manifest, emb_out;
  emb->add_option("--checkpoint", emb_ckpt, "model checkpoint")->required();
  emb->add_option("--manifest", emb_manifest, "utterance manifest")->required();
  emb->add_option("--out", emb_out, "output embeddings container")->required();

  // score
  auto* score = app.add_subcommand("score", "score verification trials over embeddings");
  std::string score_emb, score_trials, score_report = "report.json";
  score->add_option("--embeddings", score_emb, "embeddings container")->required();
  score->add_option("--trials", score_trials, "trial list file")->required();
  score->add_option("--report", score_report, "report output path");
  score->add_option("--config", config_path, "run configuration file");
  score->add_option("--set", overrides, "override, section.key=value");

  // params
  auto* par = app.add_subcommand("params", "print per-layer parameter counts");
  par->add_option("--config", config_path, "run configuration file");
  par->add_option("--set", overrides, "override, section.key=value");
  par->add_option("--variant", variant, "ablation variant");

  // features (debug)
  auto* feat = app.add_subcommand("features", "dump filterbank features for a manifest");
  std::string feat_manifest, feat_out;
  std::size_t feat_filters = 80;
  feat->add_option("--manifest", feat_manifest, "utterance manifest")->required();
  feat->add_option("--out", feat_out, "output container")->required();
  feat->add_option("--filters", feat_filters, "filterbank size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n' << app.help() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, gen_speakers, gen_utts, gen_duration, gen_rate, gen_seed,
                          gen_pairs);
    }
    if (train->parsed()) return cmd_train(config_path, overrides, variant, out_dir, train_seed);
    if (emb->parsed()) return cmd_embed(emb_ckpt, emb_manifest, emb_out);
    if (score->parsed()) return cmd_score(score_emb, score_trials, score_report, config_path, overrides);
    if (par->parsed()) return cmd_params(config_path, overrides, variant);
    if (feat->parsed()) return cmd_features(feat_manifest, feat_out, feat_filters);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

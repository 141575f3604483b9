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

#include "acanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "acanet/rng.hpp"

namespace acanet {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());
  std::vector<ManifestEntry> entries;
  std::unordered_map<std::string, std::size_t> seen;  // utt_id -> line number
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string duration;
    if (!std::getline(ss, e.utt_id, '\t') || !std::getline(ss, e.speaker_id, '\t') ||
        !std::getline(ss, e.path, '\t') || !std::getline(ss, duration)) {
      throw std::runtime_error("load_manifest: " + path.string() + ":" + std::to_string(line_no) +
                               ": expected 4 tab-separated fields");
    }
    try {
      e.duration_s = std::stod(duration);
    } catch (const std::exception&) {
      throw std::runtime_error("load_manifest: " + path.string() + ":" + std::to_string(line_no) +
                               ": bad duration '" + duration + "'");
    }
    if (e.duration_s <= 0.0) {
      throw std::runtime_error("load_manifest: " + path.string() + ":" + std::to_string(line_no) +
                               ": duration must be positive");
    }
    auto [it, inserted] = seen.emplace(e.utt_id, line_no);
    if (!inserted) {
      throw std::runtime_error("load_manifest: duplicate utt_id '" + e.utt_id + "' on lines " +
                               std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    const std::filesystem::path audio = resolve_audio_path(path, e);
    if (!std::filesystem::exists(audio)) {
      throw std::runtime_error("load_manifest: " + path.string() + ":" + std::to_string(line_no) +
                               ": referenced audio file " + audio.string() + " does not exist");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path.string());
  for (const ManifestEntry& e : entries) {
    std::ostringstream dur;
    dur.precision(6);
    dur << std::fixed << e.duration_s;
    out << e.utt_id << '\t' << e.speaker_id << '\t' << e.path << '\t' << dur.str() << '\n';
  }
  if (!out) throw std::runtime_error("save_manifest: failed writing " + path.string());
}

std::filesystem::path resolve_audio_path(const std::filesystem::path& manifest_path,
                                         const ManifestEntry& entry) {
  std::filesystem::path p(entry.path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

std::vector<SyntheticSpeakerSpec> make_speaker_specs(std::size_t n_speakers, std::uint64_t seed) {
  if (n_speakers == 0) throw std::invalid_argument("make_speaker_specs: need at least 1 speaker");
  Rng rng = Rng(seed).fork("speaker_specs");
  std::vector<SyntheticSpeakerSpec> specs(n_speakers);
  // Fundamentals on a fixed grid so any two voices are guaranteed to
  // differ; resonances drawn per voice inside non-degenerate bands.
  const double f0_lo = 110.0, f0_hi = 240.0;
  for (std::size_t i = 0; i < n_speakers; ++i) {
    SyntheticSpeakerSpec& s = specs[i];
    const double frac = n_speakers == 1 ? 0.0
                                        : static_cast<double>(i) / static_cast<double>(n_speakers - 1);
    s.f0_hz = f0_lo + (f0_hi - f0_lo) * frac;
    s.resonances_hz[0] = rng.uniform(420.0, 950.0);
    s.resonances_hz[1] = rng.uniform(1100.0, 2200.0);
    s.resonances_hz[2] = rng.uniform(2500.0, 3600.0);
    s.spectral_tilt = rng.uniform(0.82, 0.93);
    s.seed = rng.next_u64();
  }
  return specs;
}

WaveBuffer synthesize_utterance(const SyntheticSpeakerSpec& spec, std::size_t utt_index,
                                double duration_s, std::size_t sample_rate) {
  if (duration_s <= 0.0 || sample_rate == 0) {
    throw std::invalid_argument("synthesize_utterance: bad duration or sample rate");
  }
  const double nyquist = static_cast<double>(sample_rate) / 2.0;
  for (double r : spec.resonances_hz) {
    if (r >= nyquist) {
      throw std::invalid_argument("synthesize_utterance: resonance above Nyquist");
    }
  }
  Rng rng = Rng(spec.seed).fork("utt" + std::to_string(utt_index));
  const double f0 = spec.f0_hz * (1.0 + rng.uniform(-spec.f0_jitter, spec.f0_jitter));
  std::array<double, 3> res = spec.resonances_hz;
  for (double& r : res) {
    r *= 1.0 + rng.uniform(-spec.resonance_jitter, spec.resonance_jitter);
  }
  const double gain = std::pow(10.0, rng.uniform(-spec.gain_db_range, 0.0) / 20.0);
  const double noise_amp = rng.uniform(0.2, 1.0) * spec.noise_floor;

  // Harmonic amplitudes: spectral tilt decay with formant-like bumps.
  const std::size_t n_samples = static_cast<std::size_t>(
      std::lround(duration_s * static_cast<double>(sample_rate)));
  std::vector<double> amps, phases;
  for (std::size_t k = 1; k * f0 < 0.95 * nyquist; ++k) {
    const double f = static_cast<double>(k) * f0;
    double boost = 0.0;
    const double weights[3] = {1.0, 0.7, 0.5};
    for (std::size_t r = 0; r < 3; ++r) {
      const double d = (f - res[r]) / 130.0;
      boost += weights[r] * std::exp(-0.5 * d * d);
    }
    amps.push_back(std::pow(spec.spectral_tilt, static_cast<double>(k - 1)) * (0.05 + boost));
    phases.push_back(rng.uniform(0.0, 2.0 * kPi));
  }

  WaveBuffer w;
  w.sample_rate = sample_rate;
  w.samples.resize(n_samples, 0.0);
  const double dt = 1.0 / static_cast<double>(sample_rate);
  double peak = 0.0;
  for (std::size_t t = 0; t < n_samples; ++t) {
    double v = 0.0;
    const double time = static_cast<double>(t) * dt;
    for (std::size_t k = 0; k < amps.size(); ++k) {
      v += amps[k] * std::sin(2.0 * kPi * static_cast<double>(k + 1) * f0 * time + phases[k]);
    }
    w.samples[t] = v;
    peak = std::max(peak, std::abs(v));
  }
  const double norm = peak > 0.0 ? 0.95 / peak : 1.0;
  for (std::size_t t = 0; t < n_samples; ++t) {
    w.samples[t] = gain * (w.samples[t] * norm + noise_amp * rng.uniform(-1.0, 1.0));
    w.samples[t] = std::clamp(w.samples[t], -1.0, 1.0);
  }
  return w;
}

CorpusPaths generate_corpus(const std::filesystem::path& out_dir, const CorpusConfig& cfg,
                            std::uint64_t seed) {
  if (cfg.n_speakers < 2) {
    throw std::invalid_argument("generate_corpus: need at least 2 speakers, got " +
                                std::to_string(cfg.n_speakers));
  }
  if (cfg.utts_per_speaker == 0) {
    throw std::invalid_argument("generate_corpus: utts_per_speaker must be positive");
  }
  std::filesystem::create_directories(out_dir / "wav");
  const std::vector<SyntheticSpeakerSpec> specs = make_speaker_specs(cfg.n_speakers, seed);

  // Held-out test speakers come from the end of the grid; at least one test
  // speaker, at least two train/dev speakers when possible.
  std::size_t n_test_speakers = static_cast<std::size_t>(
      std::lround(cfg.test_speaker_fraction * static_cast<double>(cfg.n_speakers)));
  n_test_speakers = std::clamp<std::size_t>(n_test_speakers, 1, cfg.n_speakers - 1);

  std::vector<ManifestEntry> all, train, dev, test;
  for (std::size_t s = 0; s < cfg.n_speakers; ++s) {
    const bool is_test = s >= cfg.n_speakers - n_test_speakers;
    std::ostringstream spk;
    spk << "spk" << std::setw(3) << std::setfill('0') << s;
    std::size_t n_dev = 0;
    if (!is_test && cfg.utts_per_speaker >= 2) {
      n_dev = static_cast<std::size_t>(
          std::lround(cfg.dev_utt_fraction * static_cast<double>(cfg.utts_per_speaker)));
      n_dev = std::clamp<std::size_t>(n_dev, 1, cfg.utts_per_speaker - 1);
    }
    for (std::size_t u = 0; u < cfg.utts_per_speaker; ++u) {
      std::ostringstream utt;
      utt << spk.str() << "_utt" << std::setw(4) << std::setfill('0') << u;
      const std::string rel = "wav/" + utt.str() + ".wav";
      const WaveBuffer w = synthesize_utterance(specs[s], u, cfg.duration_s, cfg.sample_rate);
      write_wav(out_dir / rel, w);
      ManifestEntry e{utt.str(), spk.str(), rel, w.duration_s()};
      all.push_back(e);
      if (is_test) {
        test.push_back(e);
      } else if (u >= cfg.utts_per_speaker - n_dev) {
        dev.push_back(e);
      } else {
        train.push_back(e);
      }
    }
  }

  CorpusPaths paths;
  paths.root = out_dir;
  paths.all_manifest = out_dir / "all.manifest";
  paths.train_manifest = out_dir / "train.manifest";
  paths.dev_manifest = out_dir / "dev.manifest";
  paths.test_manifest = out_dir / "test.manifest";
  save_manifest(paths.all_manifest, all);
  save_manifest(paths.train_manifest, train);
  save_manifest(paths.dev_manifest, dev);
  save_manifest(paths.test_manifest, test);
  return paths;
}

TrialList build_trials(const std::vector<ManifestEntry>& manifest, std::size_t n_pairs,
                       double target_fraction, std::uint64_t seed) {
  if (target_fraction < 0.0 || target_fraction > 1.0) {
    throw std::invalid_argument("build_trials: target_fraction must be in [0, 1]");
  }
  std::unordered_map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    by_speaker[manifest[i].speaker_id].push_back(i);
  }
  std::size_t possible_targets = 0;
  for (const auto& [spk, utts] : by_speaker) {
    possible_targets += utts.size() * (utts.size() - 1) / 2;
  }
  std::size_t possible_nontargets = 0;
  {
    std::size_t total = manifest.size();
    std::size_t same = 0;
    for (const auto& [spk, utts] : by_speaker) same += utts.size() * utts.size();
    possible_nontargets = (total * total - same) / 2;
  }

  const std::size_t n_target = static_cast<std::size_t>(
      std::lround(target_fraction * static_cast<double>(n_pairs)));
  const std::size_t n_nontarget = n_pairs - n_target;
  if (n_target > possible_targets) {
    throw std::invalid_argument("build_trials: requested " + std::to_string(n_target) +
                                " target pairs but only " + std::to_string(possible_targets) +
                                " distinct same-speaker pairs exist");
  }
  if (n_nontarget > possible_nontargets) {
    throw std::invalid_argument("build_trials: requested " + std::to_string(n_nontarget) +
                                " non-target pairs but only " +
                                std::to_string(possible_nontargets) + " cross-speaker pairs exist");
  }

  Rng rng = Rng(seed).fork("trials");
  std::set<std::pair<std::size_t, std::size_t>> used;
  auto key = [](std::size_t a, std::size_t b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  };
  TrialList trials;
  trials.reserve(n_pairs);

  std::size_t made = 0;
  while (made < n_target) {
    const std::size_t a = rng.below(manifest.size());
    const auto& peers = by_speaker.at(manifest[a].speaker_id);
    if (peers.size() < 2) continue;
    const std::size_t b = peers[rng.below(peers.size())];
    if (a == b || used.count(key(a, b))) continue;
    used.insert(key(a, b));
    trials.push_back(Trial{manifest[a].utt_id, manifest[b].utt_id, true});
    ++made;
  }
  made = 0;
  while (made < n_nontarget) {
    const std::size_t a = rng.below(manifest.size());
    const std::size_t b = rng.below(manifest.size());
    if (a == b || manifest[a].speaker_id == manifest[b].speaker_id) continue;
    if (used.count(key(a, b))) continue;
    used.insert(key(a, b));
    trials.push_back(Trial{manifest[a].utt_id, manifest[b].utt_id, false});
    ++made;
  }
  return trials;
}

}  // namespace acanet

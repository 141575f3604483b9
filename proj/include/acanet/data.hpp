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

#ifndef ACANET_DATA_HPP
#define ACANET_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acanet/metrics.hpp"
#include "acanet/wav.hpp"

namespace acanet {

struct ManifestEntry {
  std::string utt_id;
  std::string speaker_id;
  std::string path;  // as written in the manifest; may be relative
  double duration_s = 0.0;
};

// Manifest file: one record per line, tab-separated
// `utt_id<TAB>speaker_id<TAB>path<TAB>duration_s`, UTF-8. Relative paths are
// resolved against the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::filesystem::path resolve_audio_path(const std::filesystem::path& manifest_path,
                                         const ManifestEntry& entry);

// One synthetic voice: a harmonic source with formant-like resonances and a
// spectral tilt. The jitter ranges control per-utterance variation (pitch
// and resonance drift, playback gain, noise floor), which is what keeps
// utterances of the same voice from being identical.
struct SyntheticSpeakerSpec {
  double f0_hz = 150.0;
  std::array<double, 3> resonances_hz = {500.0, 1500.0, 2900.0};
  double spectral_tilt = 0.88;      // per-harmonic amplitude decay, in (0, 1]
  double f0_jitter = 0.04;          // relative
  double resonance_jitter = 0.03;   // relative
  double gain_db_range = 10.0;      // per-utterance gain drawn from [-range, 0] dB
  double noise_floor = 0.02;        // white-noise amplitude upper bound
  std::uint64_t seed = 0;
};

// Deterministically well-separated voices for an n-speaker corpus.
std::vector<SyntheticSpeakerSpec> make_speaker_specs(std::size_t n_speakers, std::uint64_t seed);

// One utterance of one voice; deterministic per (spec, utt_index).
WaveBuffer synthesize_utterance(const SyntheticSpeakerSpec& spec, std::size_t utt_index,
                                double duration_s, std::size_t sample_rate);

struct CorpusConfig {
  std::size_t n_speakers = 12;
  std::size_t utts_per_speaker = 20;
  double duration_s = 2.0;
  std::size_t sample_rate = 8000;
  // Held-out fraction of speakers that form the test split; the remaining
  // speakers share train and dev with disjoint utterances.
  double test_speaker_fraction = 1.0 / 3.0;
  double dev_utt_fraction = 0.15;
};

struct CorpusPaths {
  std::filesystem::path root;
  std::filesystem::path all_manifest;
  std::filesystem::path train_manifest;
  std::filesystem::path dev_manifest;
  std::filesystem::path test_manifest;
};

// Writes WAVs under <out_dir>/wav plus all/train/dev/test manifests.
// Identical arguments produce byte-identical output trees.
CorpusPaths generate_corpus(const std::filesystem::path& out_dir, const CorpusConfig& cfg,
                            std::uint64_t seed);

// Samples target (same speaker, distinct utterances) and non-target pairs
// to the requested fraction; no duplicate pairs, no utterance paired with
// itself. round(n_pairs * target_fraction) trials are targets.
TrialList build_trials(const std::vector<ManifestEntry>& manifest, std::size_t n_pairs,
                       double target_fraction, std::uint64_t seed);

}  // namespace acanet

#endif  // ACANET_DATA_HPP

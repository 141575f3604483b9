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

#ifndef ACANET_FEATURES_HPP
#define ACANET_FEATURES_HPP

#include <cstddef>

#include "acanet/tensor.hpp"
#include "acanet/wav.hpp"

namespace acanet {

struct FeatureMatrix {
  Tensor values;  // n_filters x T
  double frame_hop_ms = 10.0;
  double frame_win_ms = 25.0;

  std::size_t n_filters() const { return values.rows(); }
  std::size_t n_frames() const { return values.cols(); }
};

struct FbankConfig {
  std::size_t n_filters = 80;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  // 0 picks the smallest power of two that fits one window.
  std::size_t n_fft = 0;
  double log_floor = 1e-10;
  // Per-utterance mean/variance normalization over time, off by default.
  bool mean_var_norm = false;
};

// Log mel filterbank features. Framing convention: frame t covers samples
// [t*hop, t*hop + win), no padding anywhere, so T = floor((N - win)/hop) + 1
// and no frame looks ahead of the signal. Each frame: Hann window (periodic),
// zero-padded FFT, magnitude spectrum, triangular mel filters spanning
// 0..Nyquist, then log(max(energy, log_floor)).
FeatureMatrix log_mel_fbank(const WaveBuffer& w, const FbankConfig& cfg = {});

// Interleaved sine/cosine positional encoding, shaped C x T: channel 2i is
// sin(t / 10000^(2i/C)), channel 2i+1 is cos with the same rate. C must be
// even.
Tensor sinusoidal_pos_encoding(std::size_t n_positions, std::size_t n_channels);

}  // namespace acanet

#endif  // ACANET_FEATURES_HPP

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

#include "acanet/features.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace acanet {

namespace {

constexpr double kPi = 3.14159265358979323846;

// In-place iterative radix-2 FFT. n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters, peak 1, over FFT bin frequencies.
std::vector<std::vector<double>> mel_filterbank(std::size_t n_filters, std::size_t n_fft,
                                                double sample_rate) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_filters + 1));
  }
  std::vector<std::vector<double>> filters(n_filters, std::vector<double>(n_bins, 0.0));
  for (std::size_t f = 0; f < n_filters; ++f) {
    const double lo = edges[f], mid = edges[f + 1], hi = edges[f + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      if (hz <= lo || hz >= hi) continue;
      filters[f][k] = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
    }
  }
  return filters;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

FeatureMatrix log_mel_fbank(const WaveBuffer& w, const FbankConfig& cfg) {
  if (w.sample_rate == 0) throw std::invalid_argument("log_mel_fbank: sample rate not set");
  if (cfg.n_filters == 0) throw std::invalid_argument("log_mel_fbank: n_filters must be positive");
  const std::size_t win = static_cast<std::size_t>(
      std::lround(cfg.win_ms * 1e-3 * static_cast<double>(w.sample_rate)));
  const std::size_t hop = static_cast<std::size_t>(
      std::lround(cfg.hop_ms * 1e-3 * static_cast<double>(w.sample_rate)));
  if (win == 0 || hop == 0) throw std::invalid_argument("log_mel_fbank: window/hop too small");
  if (w.samples.size() < win) {
    throw std::invalid_argument("log_mel_fbank: utterance of " +
                                std::to_string(w.samples.size()) +
                                " samples is shorter than one window (" + std::to_string(win) +
                                ")");
  }
  const std::size_t n_fft = cfg.n_fft ? cfg.n_fft : next_pow2(win);
  if (n_fft < win) throw std::invalid_argument("log_mel_fbank: n_fft smaller than window");
  const std::size_t n_frames = (w.samples.size() - win) / hop + 1;
  const std::size_t n_bins = n_fft / 2 + 1;

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(win));
  }
  const auto filters = mel_filterbank(cfg.n_filters, n_fft, static_cast<double>(w.sample_rate));

  Tensor out({cfg.n_filters, n_frames});
  auto ov = out.values();
  std::vector<std::complex<double>> frame(n_fft);
  std::vector<double> mag(n_bins);
  for (std::size_t t = 0; t < n_frames; ++t) {
    for (std::size_t i = 0; i < n_fft; ++i) {
      frame[i] = i < win ? std::complex<double>(w.samples[t * hop + i] * window[i], 0.0)
                         : std::complex<double>(0.0, 0.0);
    }
    fft_radix2(frame);
    for (std::size_t k = 0; k < n_bins; ++k) mag[k] = std::abs(frame[k]);
    for (std::size_t f = 0; f < cfg.n_filters; ++f) {
      double e = 0.0;
      const auto& fil = filters[f];
      for (std::size_t k = 0; k < n_bins; ++k) e += fil[k] * mag[k];
      ov[f * n_frames + t] = std::log(std::max(e, cfg.log_floor));
    }
  }

  if (cfg.mean_var_norm) {
    for (std::size_t f = 0; f < cfg.n_filters; ++f) {
      double mu = 0.0;
      for (std::size_t t = 0; t < n_frames; ++t) mu += ov[f * n_frames + t];
      mu /= static_cast<double>(n_frames);
      double var = 0.0;
      for (std::size_t t = 0; t < n_frames; ++t) {
        const double d = ov[f * n_frames + t] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n_frames);
      const double inv = 1.0 / std::sqrt(var + 1e-10);
      for (std::size_t t = 0; t < n_frames; ++t) ov[f * n_frames + t] = (ov[f * n_frames + t] - mu) * inv;
    }
  }

  FeatureMatrix fm;
  fm.values = out;
  fm.frame_hop_ms = cfg.hop_ms;
  fm.frame_win_ms = cfg.win_ms;
  return fm;
}

Tensor sinusoidal_pos_encoding(std::size_t n_positions, std::size_t n_channels) {
  if (n_positions == 0) throw std::invalid_argument("sinusoidal_pos_encoding: T must be >= 1");
  if (n_channels == 0 || n_channels % 2 != 0) {
    throw std::invalid_argument("sinusoidal_pos_encoding: channel count must be even, got " +
                                std::to_string(n_channels));
  }
  Tensor pe({n_channels, n_positions});
  auto pv = pe.values();
  for (std::size_t c = 0; c < n_channels; c += 2) {
    const double rate = std::pow(10000.0, static_cast<double>(c) / static_cast<double>(n_channels));
    for (std::size_t t = 0; t < n_positions; ++t) {
      const double x = static_cast<double>(t) / rate;
      pv[c * n_positions + t] = std::sin(x);
      pv[(c + 1) * n_positions + t] = std::cos(x);
    }
  }
  return pe;
}

}  // namespace acanet

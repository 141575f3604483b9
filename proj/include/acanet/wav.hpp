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

#ifndef ACANET_WAV_HPP
#define ACANET_WAV_HPP

#include <cstddef>
#include <filesystem>
#include <vector>

namespace acanet {

struct WaveBuffer {
  std::vector<double> samples;  // in [-1, 1]
  std::size_t sample_rate = 0;  // Hz

  double duration_s() const {
    return sample_rate ? static_cast<double>(samples.size()) / static_cast<double>(sample_rate)
                       : 0.0;
  }
};

// Reads a RIFF WAV file. Only PCM 16-bit mono is accepted; anything else
// (extra channels, other encodings) raises with a description of what was
// found. Samples are scaled by 1/32768.
WaveBuffer read_wav(const std::filesystem::path& path);

// Writes PCM 16-bit mono. Samples are clipped to [-1, 1] and scaled by 32767.
void write_wav(const std::filesystem::path& path, const WaveBuffer& w);

}  // namespace acanet

#endif  // ACANET_WAV_HPP

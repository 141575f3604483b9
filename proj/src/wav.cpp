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

#include "acanet/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace acanet {

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

}  // namespace

WaveBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open " + path.string());

  char tag[5] = {0};
  in.read(tag, 4);
  if (!in || std::strncmp(tag, "RIFF", 4) != 0) {
    throw std::runtime_error("read_wav: " + path.string() + " is not a RIFF file");
  }
  read_u32(in);  // overall size
  in.read(tag, 4);
  if (!in || std::strncmp(tag, "WAVE", 4) != 0) {
    throw std::runtime_error("read_wav: " + path.string() + " is not a WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t sample_rate = 0;
  std::vector<char> data;
  while (in) {
    in.read(tag, 4);
    if (!in) break;
    const std::uint32_t chunk_size = read_u32(in);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      format = read_u16(in);
      channels = read_u16(in);
      sample_rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (chunk_size > 16) in.ignore(chunk_size - 16);
      have_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      data.resize(chunk_size);
      in.read(data.data(), chunk_size);
      break;
    } else {
      in.ignore(chunk_size + (chunk_size % 2));  // chunks are word aligned
    }
  }
  if (!have_fmt) throw std::runtime_error("read_wav: " + path.string() + " has no fmt chunk");
  if (format != 1 || bits != 16) {
    throw std::runtime_error("read_wav: " + path.string() + " uses unsupported encoding (format " +
                             std::to_string(format) + ", " + std::to_string(bits) +
                             " bits); expected PCM 16-bit");
  }
  if (channels != 1) {
    throw std::runtime_error("read_wav: " + path.string() + " has " + std::to_string(channels) +
                             " channels; expected mono (no automatic downmix)");
  }
  if (data.empty()) throw std::runtime_error("read_wav: " + path.string() + " has no samples");

  WaveBuffer w;
  w.sample_rate = sample_rate;
  w.samples.resize(data.size() / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    std::int16_t s;
    std::memcpy(&s, data.data() + 2 * i, 2);
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const WaveBuffer& w) {
  if (w.samples.empty()) throw std::invalid_argument("write_wav: empty sample buffer");
  if (w.sample_rate == 0) throw std::invalid_argument("write_wav: sample rate not set");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_wav: cannot open " + path.string());

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  write_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (double s : w.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const std::int16_t q = static_cast<std::int16_t>(std::lround(clipped * 32767.0));
    char b[2] = {static_cast<char>(q & 0xff), static_cast<char>((q >> 8) & 0xff)};
    out.write(b, 2);
  }
  if (!out) throw std::runtime_error("write_wav: failed writing " + path.string());
}

}  // namespace acanet

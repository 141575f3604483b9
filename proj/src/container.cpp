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

#include "acanet/container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace acanet {

static_assert(std::numeric_limits<float>::is_iec559, "IEEE-754 float required");

namespace {

constexpr char kMagic[4] = {'A', 'C', 'N', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("container: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("container: truncated string");
  return s;
}

}  // namespace

void ArrayContainer::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = value;
      return;
    }
  }
  meta.emplace_back(key, value);
}

const std::string* ArrayContainer::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return &v;
  }
  return nullptr;
}

const std::string& ArrayContainer::require_meta(const std::string& key) const {
  const std::string* v = find_meta(key);
  if (!v) throw std::runtime_error("container: missing metadata key '" + key + "'");
  return *v;
}

void ArrayContainer::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::invalid_argument("container: duplicate array name '" + name + "'");
  arrays.emplace_back(name, std::move(t));
}

const Tensor* ArrayContainer::find(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& ArrayContainer::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw std::runtime_error("container: missing array '" + name + "'");
  return *t;
}

void save_container(const std::filesystem::path& path, const ArrayContainer& c) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("container: cannot open " + tmp.string());
    out.write(kMagic, 4);
    put_u32(out, kContainerVersion);
    put_u32(out, static_cast<std::uint32_t>(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
      put_string(out, k);
      put_string(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(c.arrays.size()));
    for (const auto& [name, t] : c.arrays) {
      put_string(out, name);
      put_u32(out, static_cast<std::uint32_t>(t.ndim()));
      for (std::size_t d : t.shape()) put_u64(out, d);
      for (double v : t.values()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
      }
    }
    if (!out) throw std::runtime_error("container: failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ArrayContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("container: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("container: " + path.string() + " has wrong magic bytes");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kContainerVersion) {
    throw std::runtime_error("container: " + path.string() + " has unsupported version " +
                             std::to_string(version));
  }
  ArrayContainer c;
  const std::uint32_t n_meta = get_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_string(in);
    std::string v = get_string(in);
    c.meta.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t n_arrays = get_u32(in);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = get_string(in);
    const std::uint32_t ndim = get_u32(in);
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<std::size_t>(get_u64(in));
      numel *= shape[d];
    }
    std::vector<double> vals(numel);
    for (std::size_t j = 0; j < numel; ++j) {
      const std::uint32_t bits = get_u32(in);
      float f;
      std::memcpy(&f, &bits, 4);
      vals[j] = static_cast<double>(f);
    }
    c.arrays.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(vals)));
  }
  return c;
}

}  // namespace acanet

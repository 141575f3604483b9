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

#ifndef ACANET_CONTAINER_HPP
#define ACANET_CONTAINER_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "acanet/tensor.hpp"

namespace acanet {

// Self-describing binary container for named float arrays. On disk
// (little-endian throughout):
//
//   magic "ACNT" | u32 format version
//   u32 n_meta   | n_meta x (string key, string value)
//   u32 n_arrays | per array: string name, u32 ndim, u64 dims[ndim],
//                             f32 data[prod(dims)]
//
// where string = u32 byte length + bytes. Array payloads are 32-bit floats;
// values are rounded through f32 on save, so save(load(f)) reproduces f
// byte for byte. Entry order is preserved.
struct ArrayContainer {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  void set_meta(const std::string& key, const std::string& value);
  const std::string* find_meta(const std::string& key) const;
  const std::string& require_meta(const std::string& key) const;

  void add(const std::string& name, Tensor t);
  const Tensor* find(const std::string& name) const;
  const Tensor& require(const std::string& name) const;
};

inline constexpr std::uint32_t kContainerVersion = 1;

// Write is atomic: the payload goes to a temporary file in the same
// directory which is then renamed over the target.
void save_container(const std::filesystem::path& path, const ArrayContainer& c);
ArrayContainer load_container(const std::filesystem::path& path);

}  // namespace acanet

#endif  // ACANET_CONTAINER_HPP

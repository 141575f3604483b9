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

#ifndef ACANET_CONFIG_HPP
#define ACANET_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "acanet/metrics.hpp"
#include "acanet/model.hpp"
#include "acanet/training.hpp"

namespace acanet {

// Layered run configuration: `[section]` headers with `key = value` lines,
// `#` comments. Unknown sections or keys are rejected, every key has a
// documented default, and serialize() writes a file that parses back to the
// same configuration.
struct RunConfig {
  ModelConfig model;

  struct Train {
    std::size_t epochs = 8;
    std::size_t batch_size = 32;
    double base_lr = 1e-7;
    double max_lr = 1e-2;
    std::size_t step_size = 1000;
    double crop_s = 2.0;
    double margin = 0.2;
    double aam_scale = 30.0;
    std::size_t dev_trial_pairs = 200;
    std::uint64_t seed = 42;
  } train;

  struct Data {
    std::string train_manifest;
    std::string dev_manifest;
    std::size_t sample_rate = 8000;
  } data;

  struct Eval {
    double p_target = 0.01;
    double c_fa = 1.0;
    double c_miss = 1.0;
    bool normalize_dcf = true;
  } eval;

  // `section.key=value`, the CLI override syntax.
  void apply_override(const std::string& assignment);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::string& origin = "<string>");

  TrainOptions train_options(const std::filesystem::path& out_dir) const;
  DcfParams dcf_params() const;
};

}  // namespace acanet

#endif  // ACANET_CONFIG_HPP

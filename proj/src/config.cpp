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

#include "acanet/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace acanet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& v, const std::string& what) {
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    return std::stoull(v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad unsigned integer '" + v + "' for " + what);
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& what) {
  return parse_size(v, what);
}

double parse_double(const std::string& v, const std::string& what) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return d;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad number '" + v + "' for " + what);
  }
}

bool parse_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config: bad boolean '" + v + "' for " + what);
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string double_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// One table drives parsing, overrides and serialization so the three can
// never drift apart.
struct KeyDef {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, KeyDef>& key_table() {
  static const std::map<std::string, KeyDef> table = [] {
    std::map<std::string, KeyDef> t;
    auto add = [&t](const std::string& name, auto setter, auto getter) {
      t[name] = KeyDef{setter, getter};
    };
    // model
    add("model.channels",
        [](RunConfig& c, const std::string& v) { c.model.channels = parse_size(v, "model.channels"); },
        [](const RunConfig& c) { return std::to_string(c.model.channels); });
    add("model.embedding_size",
        [](RunConfig& c, const std::string& v) { c.model.embedding_size = parse_size(v, "model.embedding_size"); },
        [](const RunConfig& c) { return std::to_string(c.model.embedding_size); });
    add("model.ffn_size",
        [](RunConfig& c, const std::string& v) { c.model.ffn_size = parse_size(v, "model.ffn_size"); },
        [](const RunConfig& c) { return std::to_string(c.model.ffn_size); });
    add("model.n_latent_blocks",
        [](RunConfig& c, const std::string& v) { c.model.n_latent_blocks = parse_size(v, "model.n_latent_blocks"); },
        [](const RunConfig& c) { return std::to_string(c.model.n_latent_blocks); });
    add("model.num_heads",
        [](RunConfig& c, const std::string& v) { c.model.num_heads = parse_size(v, "model.num_heads"); },
        [](const RunConfig& c) { return std::to_string(c.model.num_heads); });
    add("model.dropout_p",
        [](RunConfig& c, const std::string& v) { c.model.dropout_p = parse_double(v, "model.dropout_p"); },
        [](const RunConfig& c) { return double_str(c.model.dropout_p); });
    add("model.n_filters",
        [](RunConfig& c, const std::string& v) { c.model.n_filters = parse_size(v, "model.n_filters"); },
        [](const RunConfig& c) { return std::to_string(c.model.n_filters); });
    add("model.weight_sharing",
        [](RunConfig& c, const std::string& v) { c.model.weight_sharing = parse_bool(v, "model.weight_sharing"); },
        [](const RunConfig& c) { return bool_str(c.model.weight_sharing); });
    add("model.use_posenc",
        [](RunConfig& c, const std::string& v) { c.model.use_posenc = parse_bool(v, "model.use_posenc"); },
        [](const RunConfig& c) { return bool_str(c.model.use_posenc); });
    add("model.use_mla_concat",
        [](RunConfig& c, const std::string& v) { c.model.use_mla_concat = parse_bool(v, "model.use_mla_concat"); },
        [](const RunConfig& c) { return bool_str(c.model.use_mla_concat); });
    add("model.mla_depthwise",
        [](RunConfig& c, const std::string& v) { c.model.mla_depthwise = parse_bool(v, "model.mla_depthwise"); },
        [](const RunConfig& c) { return bool_str(c.model.mla_depthwise); });
    // train
    add("train.epochs",
        [](RunConfig& c, const std::string& v) { c.train.epochs = parse_size(v, "train.epochs"); },
        [](const RunConfig& c) { return std::to_string(c.train.epochs); });
    add("train.batch_size",
        [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_size(v, "train.batch_size"); },
        [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
    add("train.base_lr",
        [](RunConfig& c, const std::string& v) { c.train.base_lr = parse_double(v, "train.base_lr"); },
        [](const RunConfig& c) { return double_str(c.train.base_lr); });
    add("train.max_lr",
        [](RunConfig& c, const std::string& v) { c.train.max_lr = parse_double(v, "train.max_lr"); },
        [](const RunConfig& c) { return double_str(c.train.max_lr); });
    add("train.step_size",
        [](RunConfig& c, const std::string& v) { c.train.step_size = parse_size(v, "train.step_size"); },
        [](const RunConfig& c) { return std::to_string(c.train.step_size); });
    add("train.crop_s",
        [](RunConfig& c, const std::string& v) { c.train.crop_s = parse_double(v, "train.crop_s"); },
        [](const RunConfig& c) { return double_str(c.train.crop_s); });
    add("train.margin",
        [](RunConfig& c, const std::string& v) { c.train.margin = parse_double(v, "train.margin"); },
        [](const RunConfig& c) { return double_str(c.train.margin); });
    add("train.aam_scale",
        [](RunConfig& c, const std::string& v) { c.train.aam_scale = parse_double(v, "train.aam_scale"); },
        [](const RunConfig& c) { return double_str(c.train.aam_scale); });
    add("train.dev_trial_pairs",
        [](RunConfig& c, const std::string& v) { c.train.dev_trial_pairs = parse_size(v, "train.dev_trial_pairs"); },
        [](const RunConfig& c) { return std::to_string(c.train.dev_trial_pairs); });
    add("train.seed",
        [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64(v, "train.seed"); },
        [](const RunConfig& c) { return std::to_string(c.train.seed); });
    // data
    add("data.train_manifest",
        [](RunConfig& c, const std::string& v) { c.data.train_manifest = v; },
        [](const RunConfig& c) { return c.data.train_manifest; });
    add("data.dev_manifest",
        [](RunConfig& c, const std::string& v) { c.data.dev_manifest = v; },
        [](const RunConfig& c) { return c.data.dev_manifest; });
    add("data.sample_rate",
        [](RunConfig& c, const std::string& v) { c.data.sample_rate = parse_size(v, "data.sample_rate"); },
        [](const RunConfig& c) { return std::to_string(c.data.sample_rate); });
    // eval
    add("eval.p_target",
        [](RunConfig& c, const std::string& v) { c.eval.p_target = parse_double(v, "eval.p_target"); },
        [](const RunConfig& c) { return double_str(c.eval.p_target); });
    add("eval.c_fa",
        [](RunConfig& c, const std::string& v) { c.eval.c_fa = parse_double(v, "eval.c_fa"); },
        [](const RunConfig& c) { return double_str(c.eval.c_fa); });
    add("eval.c_miss",
        [](RunConfig& c, const std::string& v) { c.eval.c_miss = parse_double(v, "eval.c_miss"); },
        [](const RunConfig& c) { return double_str(c.eval.c_miss); });
    add("eval.normalize_dcf",
        [](RunConfig& c, const std::string& v) { c.eval.normalize_dcf = parse_bool(v, "eval.normalize_dcf"); },
        [](const RunConfig& c) { return bool_str(c.eval.normalize_dcf); });
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::runtime_error("config: override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto it = key_table().find(key);
  if (it == key_table().end()) {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
  it->second.set(*this, value);
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, def] : key_table()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << def.get(*this) << '\n';
  }
  return os.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot open " + path.string());
  out << serialize();
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::runtime_error("config: " + origin + ":" + std::to_string(line_no) +
                                 ": malformed section header '" + line + "'");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: " + origin + ":" + std::to_string(line_no) +
                               ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) {
      throw std::runtime_error("config: " + origin + ":" + std::to_string(line_no) +
                               ": key '" + key + "' outside any [section]");
    }
    const std::string full = section + "." + key;
    const auto it = key_table().find(full);
    if (it == key_table().end()) {
      throw std::runtime_error("config: " + origin + ":" + std::to_string(line_no) +
                               ": unknown key '" + full + "'");
    }
    it->second.set(cfg, value);
  }
  return cfg;
}

TrainOptions RunConfig::train_options(const std::filesystem::path& out_dir) const {
  TrainOptions opts;
  opts.epochs = train.epochs;
  opts.batch_size = train.batch_size;
  opts.lr.base_lr = train.base_lr;
  opts.lr.max_lr = train.max_lr;
  opts.lr.step_size = train.step_size;
  opts.crop_s = train.crop_s;
  opts.margin = train.margin;
  opts.aam_scale = train.aam_scale;
  opts.dev_trial_pairs = train.dev_trial_pairs;
  opts.expected_sample_rate = data.sample_rate;
  opts.out_dir = out_dir;
  return opts;
}

DcfParams RunConfig::dcf_params() const {
  DcfParams p;
  p.p_target = eval.p_target;
  p.c_fa = eval.c_fa;
  p.c_miss = eval.c_miss;
  p.normalize = eval.normalize_dcf;
  return p;
}

}  // namespace acanet

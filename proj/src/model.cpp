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

#include "acanet/model.hpp"

#include <cmath>
#include <stdexcept>

#include "acanet/container.hpp"

namespace acanet {

namespace {

double f32r(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape), 0.0, true);
  for (double& v : t.values()) v = f32r(rng.uniform(-bound, bound));
  return t;
}

// Input width of the aggregation conv: the channel concatenation of the
// latent sub-block outputs, or plain C when there is nothing to concatenate.
std::size_t mla_in_channels(const ModelConfig& cfg) {
  return (cfg.use_mla_concat && cfg.n_latent_blocks >= 1)
             ? cfg.n_latent_blocks * cfg.channels
             : cfg.channels;
}

std::size_t mla_weight_cols(const ModelConfig& cfg) {
  const std::size_t in = mla_in_channels(cfg);
  return cfg.mla_depthwise ? in / cfg.channels : in;
}

std::size_t sub_block_scalars(const ModelConfig& cfg) {
  const std::size_t c = cfg.channels, f = cfg.ffn_size;
  const std::size_t mha = 4 * (c * c + c);
  const std::size_t norms = 4 * c;
  const std::size_t ffn = (c * f + f) + (f * c + c);
  return mha + norms + ffn;
}

std::size_t unique_latent_blocks(const ModelConfig& cfg) {
  if (cfg.n_latent_blocks == 0) return 0;
  return cfg.weight_sharing ? 1 : cfg.n_latent_blocks;
}

void append_sub_block(std::vector<std::pair<std::string, Tensor>>& out,
                      const std::string& prefix, const SubBlockParams& b) {
  out.emplace_back(prefix + ".wq", b.mha.wq);
  out.emplace_back(prefix + ".bq", b.mha.bq);
  out.emplace_back(prefix + ".wk", b.mha.wk);
  out.emplace_back(prefix + ".bk", b.mha.bk);
  out.emplace_back(prefix + ".wv", b.mha.wv);
  out.emplace_back(prefix + ".bv", b.mha.bv);
  out.emplace_back(prefix + ".wo", b.mha.wo);
  out.emplace_back(prefix + ".bo", b.mha.bo);
  out.emplace_back(prefix + ".norm1.gamma", b.norm1_gamma);
  out.emplace_back(prefix + ".norm1.beta", b.norm1_beta);
  out.emplace_back(prefix + ".norm2.gamma", b.norm2_gamma);
  out.emplace_back(prefix + ".norm2.beta", b.norm2_beta);
  out.emplace_back(prefix + ".ffn1.weight", b.ffn1_w);
  out.emplace_back(prefix + ".ffn1.bias", b.ffn1_b);
  out.emplace_back(prefix + ".ffn2.weight", b.ffn2_w);
  out.emplace_back(prefix + ".ffn2.bias", b.ffn2_b);
}

SubBlockParams init_sub_block(const ModelConfig& cfg, Rng rng) {
  const std::size_t c = cfg.channels, f = cfg.ffn_size;
  SubBlockParams p;
  p.mha = MhaParams::init(c, rng);
  p.norm1_gamma = Tensor({c}, 1.0, true);
  p.norm1_beta = Tensor({c}, 0.0, true);
  p.norm2_gamma = Tensor({c}, 1.0, true);
  p.norm2_beta = Tensor({c}, 0.0, true);
  p.ffn1_w = uniform_init({c, f}, c, rng);
  p.ffn1_b = Tensor({f}, 0.0, true);
  p.ffn2_w = uniform_init({f, c}, f, rng);
  p.ffn2_b = Tensor({c}, 0.0, true);
  return p;
}

}  // namespace

void ModelConfig::validate() const {
  if (channels == 0 || embedding_size == 0 || ffn_size == 0 || n_filters == 0) {
    throw std::invalid_argument("ModelConfig: channels, embedding_size, ffn_size and n_filters must be positive");
  }
  if (num_heads == 0 || channels % num_heads != 0) {
    throw std::invalid_argument("ModelConfig: channels (" + std::to_string(channels) +
                                ") must be divisible by num_heads (" + std::to_string(num_heads) +
                                ")");
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw std::invalid_argument("ModelConfig: dropout_p must be in [0, 1)");
  }
  if (use_mla_concat && n_latent_blocks == 0) {
    throw std::invalid_argument(
        "ModelConfig: n_latent_blocks must be >= 1 when use_mla_concat is set");
  }
}

LatentState init_latent(const ModelConfig& cfg, const LatentInitSpec& spec, std::uint64_t seed) {
  if (spec.lower >= spec.upper) {
    throw std::invalid_argument("init_latent: lower bound must be below upper bound");
  }
  if (spec.stddev <= 0.0) throw std::invalid_argument("init_latent: stddev must be positive");
  Rng rng(seed);
  Tensor latent({cfg.channels, cfg.embedding_size}, 0.0, true);
  for (double& v : latent.values()) {
    double x;
    std::size_t attempts = 0;
    do {
      x = f32r(rng.normal(spec.mean, spec.stddev));
      if (++attempts > 10000) {
        throw std::runtime_error("init_latent: truncation bounds reject virtually all samples");
      }
    } while (x < spec.lower || x > spec.upper);
    v = x;
  }
  return latent;
}

AcaNetParams init_params(const ModelConfig& cfg, std::uint64_t seed,
                         const LatentInitSpec& latent_spec) {
  cfg.validate();
  Rng root(seed);
  AcaNetParams p;
  p.cfg = cfg;
  p.latent = init_latent(cfg, latent_spec, root.fork("latent").next_u64());

  Rng tdnn_rng = root.fork("tdnn");
  p.tdnn_w = uniform_init({cfg.channels, cfg.n_filters}, cfg.n_filters, tdnn_rng);
  p.tdnn_b = Tensor({cfg.channels}, 0.0, true);
  p.tdnn_bn = BatchNormState::make(cfg.channels);

  p.aca = init_sub_block(cfg, root.fork("aca_block"));
  p.latent_blocks.clear();
  const std::size_t uniq = unique_latent_blocks(cfg);
  for (std::size_t i = 0; i < uniq; ++i) {
    p.latent_blocks.push_back(init_sub_block(cfg, root.fork("latent_block." + std::to_string(i))));
  }
  // Weight sharing: the single parameter set stands in for every block.
  while (p.latent_blocks.size() < cfg.n_latent_blocks) {
    p.latent_blocks.push_back(p.latent_blocks.front());
  }

  Rng mla_rng = root.fork("mla");
  const std::size_t wcols = mla_weight_cols(cfg);
  p.mla_w = uniform_init({cfg.channels, wcols}, wcols, mla_rng);
  p.mla_b = Tensor({cfg.channels}, 0.0, true);
  p.mla_bn = BatchNormState::make(cfg.channels);

  // Small weights and a positive bias keep the final ReLU alive at
  // initialization; an all-negative head would zero the embedding and
  // could never recover (dead ReLU has no gradient).
  Rng head_rng = root.fork("head");
  p.head_w = Tensor({1, cfg.channels}, 0.0, true);
  {
    const double bound = 0.1 / std::sqrt(static_cast<double>(cfg.channels));
    for (double& v : p.head_w.values()) v = f32r(head_rng.uniform(-bound, bound));
  }
  p.head_b = Tensor({1}, f32r(0.1), true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> AcaNetParams::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("latent", latent);
  out.emplace_back("tdnn.conv.weight", tdnn_w);
  out.emplace_back("tdnn.conv.bias", tdnn_b);
  out.emplace_back("tdnn.bn.gamma", tdnn_bn.gamma);
  out.emplace_back("tdnn.bn.beta", tdnn_bn.beta);
  append_sub_block(out, "aca_block", aca);
  const std::size_t uniq = unique_latent_blocks(cfg);
  for (std::size_t i = 0; i < uniq; ++i) {
    append_sub_block(out, "latent_block." + std::to_string(i), latent_blocks[i]);
  }
  out.emplace_back("mla.conv.weight", mla_w);
  out.emplace_back("mla.conv.bias", mla_b);
  out.emplace_back("mla.bn.gamma", mla_bn.gamma);
  out.emplace_back("mla.bn.beta", mla_bn.beta);
  out.emplace_back("head.final_conv.weight", head_w);
  out.emplace_back("head.final_conv.bias", head_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> AcaNetParams::named_buffers() const {
  auto vec_tensor = [](const std::vector<double>& v) {
    return Tensor::from({v.size()}, std::vector<double>(v));
  };
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tdnn.bn.running_mean", vec_tensor(tdnn_bn.running_mean));
  out.emplace_back("tdnn.bn.running_var", vec_tensor(tdnn_bn.running_var));
  out.emplace_back("tdnn.bn.num_batches",
                   Tensor::scalar(static_cast<double>(tdnn_bn.num_batches_tracked)));
  out.emplace_back("mla.bn.running_mean", vec_tensor(mla_bn.running_mean));
  out.emplace_back("mla.bn.running_var", vec_tensor(mla_bn.running_var));
  out.emplace_back("mla.bn.num_batches",
                   Tensor::scalar(static_cast<double>(mla_bn.num_batches_tracked)));
  return out;
}

void AcaNetParams::load_buffer(const std::string& name, const Tensor& t) {
  auto to_vec = [&](std::vector<double>& dst) {
    if (t.size() != dst.size()) {
      throw std::runtime_error("checkpoint: buffer '" + name + "' has " +
                               std::to_string(t.size()) + " values, expected " +
                               std::to_string(dst.size()));
    }
    dst.assign(t.values().begin(), t.values().end());
  };
  if (name == "tdnn.bn.running_mean") to_vec(tdnn_bn.running_mean);
  else if (name == "tdnn.bn.running_var") to_vec(tdnn_bn.running_var);
  else if (name == "tdnn.bn.num_batches") tdnn_bn.num_batches_tracked = static_cast<std::size_t>(t.item());
  else if (name == "mla.bn.running_mean") to_vec(mla_bn.running_mean);
  else if (name == "mla.bn.running_var") to_vec(mla_bn.running_var);
  else if (name == "mla.bn.num_batches") mla_bn.num_batches_tracked = static_cast<std::size_t>(t.item());
  else throw std::runtime_error("checkpoint: unknown buffer '" + name + "'");
}

std::size_t AcaNetParams::n_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_params()) n += t.size();
  return n;
}

std::vector<std::pair<std::string, std::size_t>> count_params_by_layer(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  std::vector<std::pair<std::string, std::size_t>> out;
  out.emplace_back("latent", c * cfg.embedding_size);
  out.emplace_back("tdnn.conv", c * cfg.n_filters + c);
  out.emplace_back("tdnn.bn", 2 * c);
  out.emplace_back("aca_block", sub_block_scalars(cfg));
  const std::size_t uniq = unique_latent_blocks(cfg);
  for (std::size_t i = 0; i < uniq; ++i) {
    out.emplace_back("latent_block." + std::to_string(i), sub_block_scalars(cfg));
  }
  out.emplace_back("mla.conv", c * mla_weight_cols(cfg) + c);
  out.emplace_back("mla.bn", 2 * c);
  out.emplace_back("head.final_conv", c + 1);
  return out;
}

std::size_t count_params(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& [name, n] : count_params_by_layer(cfg)) total += n;
  return total;
}

ModelConfig build_ablation(const ModelConfig& base, const std::string& variant) {
  ModelConfig cfg = base;
  if (variant == "no_mla") {
    cfg.use_mla_concat = false;
  } else if (variant == "no_latent_blocks") {
    // The cross-attention output feeds the aggregation conv directly, so
    // there is nothing to concatenate either.
    cfg.n_latent_blocks = 0;
    cfg.use_mla_concat = false;
  } else if (variant == "no_posenc") {
    cfg.use_posenc = false;
  } else if (variant == "weight_sharing") {
    cfg.weight_sharing = true;
  } else {
    throw std::invalid_argument("build_ablation: unknown variant '" + variant +
                                "' (expected no_mla, no_latent_blocks, no_posenc, weight_sharing)");
  }
  cfg.validate();
  return cfg;
}

Tensor tdnn_block(Graph& g, const Tensor& feats, AcaNetParams& params, Mode mode,
                  const std::vector<bool>* padding_mask) {
  if (feats.ndim() != 2 || feats.rows() != params.cfg.n_filters) {
    detail::throw_shape_error("tdnn_block", "features " + shape_str(feats.shape()) +
                                                " do not match n_filters " +
                                                std::to_string(params.cfg.n_filters));
  }
  Tensor x = conv1d(g, feats, params.tdnn_w, params.tdnn_b);
  x = relu(g, x);
  return batchnorm1d(g, x, params.tdnn_bn, mode, padding_mask);
}

namespace {

// Shared sub-block body on token-major layouts: queries [Lq x C] attend to
// kv [Lk x C]; pre-norm, residual on the query path, then the feed-forward.
Tensor sub_block_tokens(Graph& g, const Tensor& x_tokens, const Tensor& kv_tokens,
                        bool self_attention, SubBlockParams& p, const ModelConfig& cfg,
                        Mode mode, Rng* rng, const std::vector<bool>* key_padding_mask) {
  AttentionSpec spec;
  spec.num_heads = cfg.num_heads;
  Tensor xq = layer_norm_rows(g, x_tokens, p.norm1_gamma, p.norm1_beta);
  Tensor kvn = self_attention ? xq : layer_norm_rows(g, kv_tokens, p.norm1_gamma, p.norm1_beta);
  Tensor attn = multi_head_attention(g, xq, kvn, kvn, p.mha, spec, key_padding_mask, mode, rng);
  attn = dropout(g, attn, cfg.dropout_p, mode, rng);
  Tensor x = add(g, x_tokens, attn);
  Tensor f = layer_norm_rows(g, x, p.norm2_gamma, p.norm2_beta);
  f = add_row_vector(g, matmul(g, f, p.ffn1_w), p.ffn1_b);
  f = relu(g, f);
  f = add_row_vector(g, matmul(g, f, p.ffn2_w), p.ffn2_b);
  f = dropout(g, f, cfg.dropout_p, mode, rng);
  return add(g, x, f);
}

void check_latent_shape(const char* op, const Tensor& latent, const ModelConfig& cfg) {
  if (latent.ndim() != 2 || latent.rows() != cfg.channels ||
      latent.cols() != cfg.embedding_size) {
    detail::throw_shape_error(op, "latent " + shape_str(latent.shape()) + " must be (" +
                                      std::to_string(cfg.channels) + ", " +
                                      std::to_string(cfg.embedding_size) + ")");
  }
}

}  // namespace

LatentState aca_sub_block(Graph& g, const LatentState& latent, const Tensor& feats,
                          const Tensor& posenc, SubBlockParams& params,
                          const ModelConfig& cfg, Mode mode, Rng* rng,
                          const std::vector<bool>* padding_mask) {
  check_latent_shape("aca_sub_block", latent, cfg);
  if (feats.ndim() != 2 || feats.rows() != cfg.channels) {
    detail::throw_shape_error("aca_sub_block", "features " + shape_str(feats.shape()) +
                                                   " must have " + std::to_string(cfg.channels) +
                                                   " channels");
  }
  Tensor kv = feats;
  if (posenc.defined()) {
    if (posenc.shape() != feats.shape()) {
      detail::throw_shape_error("aca_sub_block", "positional encoding " +
                                                     shape_str(posenc.shape()) +
                                                     " does not match features " +
                                                     shape_str(feats.shape()));
    }
    kv = add(g, feats, posenc);
  }
  Tensor x = transpose(g, latent);  // E x C
  Tensor kv_tokens = transpose(g, kv);  // T x C
  Tensor y = sub_block_tokens(g, x, kv_tokens, false, params, cfg, mode, rng, padding_mask);
  return transpose(g, y);
}

LatentState latent_sub_block(Graph& g, const LatentState& latent, SubBlockParams& params,
                             const ModelConfig& cfg, Mode mode, Rng* rng) {
  check_latent_shape("latent_sub_block", latent, cfg);
  Tensor x = transpose(g, latent);
  Tensor y = sub_block_tokens(g, x, x, true, params, cfg, mode, rng, nullptr);
  return transpose(g, y);
}

LatentState mla_block(Graph& g, const LatentState& latent0, const Tensor& feats,
                      AcaNetParams& params, Mode mode, Rng* rng,
                      const std::vector<bool>* padding_mask) {
  const ModelConfig& cfg = params.cfg;
  if (cfg.use_mla_concat && cfg.n_latent_blocks == 0) {
    throw std::invalid_argument("mla_block: no latent sub-blocks to concatenate");
  }
  Tensor posenc;
  if (cfg.use_posenc) posenc = sinusoidal_pos_encoding(feats.cols(), cfg.channels);
  Tensor layer = aca_sub_block(g, latent0, feats, posenc, params.aca, cfg, mode, rng, padding_mask);

  std::vector<Tensor> layers;
  layers.reserve(cfg.n_latent_blocks);
  Tensor cur = layer;
  for (std::size_t i = 0; i < cfg.n_latent_blocks; ++i) {
    cur = latent_sub_block(g, cur, params.latent_blocks[i], cfg, mode, rng);
    layers.push_back(cur);
  }

  Tensor conv_in;
  std::size_t groups = cfg.mla_depthwise ? cfg.channels : 1;
  if (cfg.use_mla_concat) {
    Tensor cat = layers.size() == 1 ? layers[0] : concat_rows(g, layers);
    if (cfg.mla_depthwise && layers.size() > 1) {
      // Contiguous conv groups must see channel c of every layer, so the
      // concatenation is reordered from [layer][channel] to [channel][layer].
      const std::size_t j = layers.size(), c = cfg.channels;
      std::vector<std::size_t> perm(j * c);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < j; ++i) perm[ch * j + i] = i * c + ch;
      cat = gather_rows(g, cat, std::move(perm));
    }
    conv_in = cat;
  } else {
    conv_in = layers.empty() ? layer : layers.back();
  }
  Tensor y = conv1d(g, conv_in, params.mla_w, params.mla_b, 1, groups);
  return batchnorm1d(g, y, params.mla_bn, mode);
}

Tensor embed_features(Graph& g, const Tensor& feats, AcaNetParams& params, Mode mode,
                      Rng* rng, const std::vector<bool>* padding_mask) {
  Tensor x = tdnn_block(g, feats, params, mode, padding_mask);
  Tensor lat = mla_block(g, params.latent, x, params, mode, rng, padding_mask);
  Tensor e = conv1d(g, lat, params.head_w, params.head_b);
  e = relu(g, e);
  return reshape(g, e, {params.cfg.embedding_size});
}

Tensor embed(const FeatureMatrix& feats, AcaNetParams& params, Mode mode) {
  Graph g;
  return embed_features(g, feats.values, params, mode);
}

namespace {

std::string bool_str(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::runtime_error("checkpoint: bad boolean '" + s + "' for " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AcaNetParams& params) {
  ArrayContainer c;
  c.set_meta("format", "acanet-checkpoint");
  c.set_meta("format_version", "1");
  const ModelConfig& cfg = params.cfg;
  c.set_meta("config.channels", std::to_string(cfg.channels));
  c.set_meta("config.embedding_size", std::to_string(cfg.embedding_size));
  c.set_meta("config.ffn_size", std::to_string(cfg.ffn_size));
  c.set_meta("config.n_latent_blocks", std::to_string(cfg.n_latent_blocks));
  c.set_meta("config.num_heads", std::to_string(cfg.num_heads));
  c.set_meta("config.dropout_p", std::to_string(cfg.dropout_p));
  c.set_meta("config.n_filters", std::to_string(cfg.n_filters));
  c.set_meta("config.weight_sharing", bool_str(cfg.weight_sharing));
  c.set_meta("config.use_posenc", bool_str(cfg.use_posenc));
  c.set_meta("config.use_mla_concat", bool_str(cfg.use_mla_concat));
  c.set_meta("config.mla_depthwise", bool_str(cfg.mla_depthwise));
  for (const auto& [name, t] : params.named_params()) c.add("param." + name, t);
  for (const auto& [name, t] : params.named_buffers()) c.add("buffer." + name, t);
  save_container(path, c);
}

AcaNetParams load_checkpoint(const std::filesystem::path& path) {
  ArrayContainer c = load_container(path);
  if (c.require_meta("format") != "acanet-checkpoint") {
    throw std::runtime_error("checkpoint: " + path.string() + " is not a checkpoint container");
  }
  if (c.require_meta("format_version") != "1") {
    throw std::runtime_error("checkpoint: unsupported format version " +
                             c.require_meta("format_version"));
  }
  ModelConfig cfg;
  cfg.channels = std::stoull(c.require_meta("config.channels"));
  cfg.embedding_size = std::stoull(c.require_meta("config.embedding_size"));
  cfg.ffn_size = std::stoull(c.require_meta("config.ffn_size"));
  cfg.n_latent_blocks = std::stoull(c.require_meta("config.n_latent_blocks"));
  cfg.num_heads = std::stoull(c.require_meta("config.num_heads"));
  cfg.dropout_p = std::stod(c.require_meta("config.dropout_p"));
  cfg.n_filters = std::stoull(c.require_meta("config.n_filters"));
  cfg.weight_sharing = parse_bool(c.require_meta("config.weight_sharing"), "weight_sharing");
  cfg.use_posenc = parse_bool(c.require_meta("config.use_posenc"), "use_posenc");
  cfg.use_mla_concat = parse_bool(c.require_meta("config.use_mla_concat"), "use_mla_concat");
  cfg.mla_depthwise = parse_bool(c.require_meta("config.mla_depthwise"), "mla_depthwise");
  cfg.validate();

  AcaNetParams params = init_params(cfg, 0);
  for (auto& [name, t] : params.named_params()) {
    const Tensor& stored = c.require("param." + name);
    if (stored.shape() != t.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                               shape_str(stored.shape()) + ", expected " + shape_str(t.shape()));
    }
    Tensor dst = t;
    std::copy(stored.values().begin(), stored.values().end(), dst.values().begin());
  }
  for (const auto& [name, t] : params.named_buffers()) {
    params.load_buffer(name, c.require("buffer." + name));
  }
  return params;
}

}  // namespace acanet

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

#ifndef ACANET_OPS_HPP
#define ACANET_OPS_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "acanet/rng.hpp"
#include "acanet/tensor.hpp"

namespace acanet {

enum class Mode { kTrain, kEval };

// Elementwise / structural ---------------------------------------------------

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double s);
// a[m x n] + bias[n], broadcast over rows.
Tensor add_row_vector(Graph& g, const Tensor& a, const Tensor& bias);
Tensor relu(Graph& g, const Tensor& a);
Tensor transpose(Graph& g, const Tensor& a);
Tensor reshape(Graph& g, const Tensor& a, std::vector<std::size_t> shape);
Tensor slice_cols(Graph& g, const Tensor& a, std::size_t c0, std::size_t c1);
Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts);
Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts);
// out[r, :] = a[index[r], :]; rows may repeat.
Tensor gather_rows(Graph& g, const Tensor& a, std::vector<std::size_t> index);
// Stacks 1-D tensors of equal length into a matrix, one per row.
Tensor stack_rows(Graph& g, const std::vector<Tensor>& vectors);
Tensor sum(Graph& g, const Tensor& a);
Tensor mean_all(Graph& g, const Tensor& a);

// Inverted dropout: scales kept entries by 1/(1-p). Identity when p == 0 or
// mode is eval. The mask is drawn from `rng`, one draw per element.
Tensor dropout(Graph& g, const Tensor& a, double p, Mode mode, Rng* rng);

// Linear algebra -------------------------------------------------------------

// Standard matrix product a[m x k] * b[k x n].
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

// Max-stabilized softmax along `axis` (1-D: axis 0; 2-D: axis 0 or 1).
Tensor softmax(Graph& g, const Tensor& a, int axis);

// Row layer norm: per row of x[m x n], y = gamma * (x - mu) / sqrt(var + eps) + beta.
Tensor layer_norm_rows(Graph& g, const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-5);

// Conv / norm over channel-major sequences ------------------------------------

// Kernel-1 grouped convolution over x[Cin x L] with weight[Cout x Cin/groups]
// and optional bias[Cout]. Group c maps input channels
// [c*Cin/g, (c+1)*Cin/g) to output channels [c*Cout/g, (c+1)*Cout/g).
Tensor conv1d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t kernel = 1, std::size_t groups = 1);

struct BatchNormState {
  Tensor gamma;  // learnable
  Tensor beta;   // learnable
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::size_t num_batches_tracked = 0;
  double momentum = 0.1;
  double eps = 1e-5;

  // gamma = 1, beta = 0, running stats (0, 1).
  static BatchNormState make(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

// For x[C x L]: train mode normalizes each channel over its (unmasked)
// positions and folds batch statistics into the running averages; eval mode
// applies the running statistics as a fixed affine map. `padding_mask`, when
// given, has length L and marks positions excluded from the statistics.
Tensor batchnorm1d(Graph& g, const Tensor& x, BatchNormState& state, Mode mode,
                   const std::vector<bool>* padding_mask = nullptr);

// Attention -------------------------------------------------------------------

struct AttentionSpec {
  std::size_t num_heads = 1;
  // Channel count used in the 1/sqrt(d) logit scale. 0 selects the per-head
  // width C / num_heads; setting it to C reproduces full-channel scaling.
  std::size_t scale_dim = 0;
  double dropout_p = 0.0;  // on attention weights, train mode only
};

struct MhaParams {
  Tensor wq, bq;  // [C x C], [C]
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;
  static MhaParams init(std::size_t channels, Rng& rng);
  static MhaParams identity(std::size_t channels);
};

// Multi-head attention over row-major token sequences: q[Lq x C],
// k[Lk x C], v[Lk x C] -> [Lq x C]. The output length is Lq no matter how
// long the key/value sequence is, which is what lets a small latent query
// distill an arbitrarily long feature sequence. `key_padding_mask` (length
// Lk, true = padded) removes positions from every attention row.
// `attention_out`, when non-null, receives the post-softmax weights per head
// ([Lq x Lk] each).
Tensor multi_head_attention(Graph& g, const Tensor& q, const Tensor& k,
                            const Tensor& v, const MhaParams& params,
                            const AttentionSpec& spec,
                            const std::vector<bool>* key_padding_mask = nullptr,
                            Mode mode = Mode::kEval, Rng* rng = nullptr,
                            std::vector<Tensor>* attention_out = nullptr);

// Gradient checking ------------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> per_input;  // worst coordinate of each input
};

// Central-difference check of d(loss)/d(input) for every named input, all
// accumulation in double. `loss_fn` must rebuild the scalar loss from the
// current contents of the input tensors; it is invoked many times and must
// be deterministic (checked by evaluating it twice before differencing).
// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator.
GradCheckReport grad_check(const std::function<Tensor(Graph&)>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           double eps = 1e-5);

}  // namespace acanet

#endif  // ACANET_OPS_HPP

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

#include "acanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace acanet {

namespace {

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    detail::throw_shape_error(op, "shapes " + shape_str(a.shape()) + " and " +
                                      shape_str(b.shape()) + " differ");
  }
}

// out[m x n] = a[m x k] * b[k x n]
void mm_nn(const double* a, const double* b, double* out, std::size_t m,
           std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(out, out + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x n] (+)= a[m x p] * b[n x p]^T
void mm_nt(const double* a, const double* b, double* out, std::size_t m,
           std::size_t p, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * p;
    double* orow = out + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * p;
      double s = 0.0;
      for (std::size_t q = 0; q < p; ++q) s += arow[q] * brow[q];
      if (accumulate) {
        orow[j] += s;
      } else {
        orow[j] = s;
      }
    }
  }
}

// out[m x n] (+)= a[r x m]^T * b[r x n]
void mm_tn(const double* a, const double* b, double* out, std::size_t r,
           std::size_t m, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(out, out + m * n, 0.0);
  for (std::size_t q = 0; q < r; ++q) {
    const double* arow = a + q * m;
    const double* brow = b + q * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = out + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape(), 0.0, any_grad({&a, &b}));
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    g.record("add", {a, b}, out, [a, b, out](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      for (const Tensor& t : {a, b}) {
        if (!t.requires_grad()) continue;
        auto& dt = gr.grad_buffer(t);
        for (std::size_t i = 0; i < dy.size(); ++i) dt[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape(), 0.0, any_grad({&a, &b}));
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (out.requires_grad()) {
    g.record("sub", {a, b}, out, [a, b, out](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      if (a.requires_grad()) {
        auto& da = gr.grad_buffer(a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto& db = gr.grad_buffer(b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
      }
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape(), 0.0, any_grad({&a, &b}));
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    g.record("mul", {a, b}, out, [a, b, out](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      if (a.requires_grad()) {
        auto& da = gr.grad_buffer(a);
        auto bv2 = b.values();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto& db = gr.grad_buffer(b);
        auto av2 = a.values();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av2[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& a, double s) {
  Tensor out(a.shape(), 0.0, a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = s * av[i];
  if (out.requires_grad()) {
    g.record("scale", {a}, out, [a, out, s](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& da = gr.grad_buffer(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += s * dy[i];
    });
  }
  return out;
}

Tensor add_row_vector(Graph& g, const Tensor& a, const Tensor& bias) {
  if (a.ndim() != 2 || bias.ndim() != 1 || bias.size() != a.cols()) {
    detail::throw_shape_error("add_row_vector",
                              "matrix " + shape_str(a.shape()) + " with bias " +
                                  shape_str(bias.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(a.shape(), 0.0, any_grad({&a, &bias}));
  auto av = a.values(), bv = bias.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = av[i * n + j] + bv[j];
  if (out.requires_grad()) {
    g.record("add_row_vector", {a, bias}, out, [a, bias, out, m, n](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      if (a.requires_grad()) {
        auto& da = gr.grad_buffer(a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (bias.requires_grad()) {
        auto& db = gr.grad_buffer(bias);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
      }
    });
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& a) {
  Tensor out(a.shape(), 0.0, a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (out.requires_grad()) {
    g.record("relu", {a}, out, [a, out](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& da = gr.grad_buffer(a);
      auto av2 = a.values();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (av2[i] > 0.0) da[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor transpose(Graph& g, const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m}, 0.0, a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
  if (out.requires_grad()) {
    g.record("transpose", {a}, out, [a, out, m, n](Graph& gr) {
      const auto& dy = *gr.find_grad(out);  // n x m
      auto& da = gr.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += dy[j * m + i];
    });
  }
  return out;
}

Tensor reshape(Graph& g, const Tensor& a, std::vector<std::size_t> shape) {
  Tensor out = Tensor::from(std::move(shape),
                            std::vector<double>(a.values().begin(), a.values().end()),
                            a.requires_grad());
  if (out.size() != a.size()) {
    detail::throw_shape_error("reshape", "cannot reshape " + shape_str(a.shape()) +
                                             " to " + shape_str(out.shape()));
  }
  if (out.requires_grad()) {
    g.record("reshape", {a}, out, [a, out](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& da = gr.grad_buffer(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    });
  }
  return out;
}

Tensor slice_cols(Graph& g, const Tensor& a, std::size_t c0, std::size_t c1) {
  const std::size_t m = a.rows(), n = a.cols();
  if (c0 >= c1 || c1 > n) {
    detail::throw_shape_error("slice_cols", "range [" + std::to_string(c0) + ", " +
                                                std::to_string(c1) + ") of " +
                                                shape_str(a.shape()));
  }
  const std::size_t w = c1 - c0;
  Tensor out({m, w}, 0.0, a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) ov[i * w + j] = av[i * n + c0 + j];
  if (out.requires_grad()) {
    g.record("slice_cols", {a}, out, [a, out, m, n, c0, w](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& da = gr.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) da[i * n + c0 + j] += dy[i * w + j];
    });
  }
  return out;
}

Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) detail::throw_shape_error("concat_cols", "no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    if (p.rows() != m) {
      detail::throw_shape_error("concat_cols", "row mismatch: " + shape_str(parts[0].shape()) +
                                                   " vs " + shape_str(p.shape()));
    }
    total += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out({m, total}, 0.0, needs_grad);
  auto ov = out.values();
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    auto pv = p.values();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ov[i * total + off + j] = pv[i * w + j];
    off += w;
  }
  if (needs_grad) {
    g.record("concat_cols", parts, out, [parts, out, m, total](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      std::size_t o = 0;
      for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto& dp = gr.grad_buffer(p);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) dp[i * w + j] += dy[i * total + o + j];
        }
        o += w;
      }
    });
  }
  return out;
}

Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) detail::throw_shape_error("concat_rows", "no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    if (p.cols() != n) {
      detail::throw_shape_error("concat_rows", "column mismatch: " + shape_str(parts[0].shape()) +
                                                   " vs " + shape_str(p.shape()));
    }
    total += p.rows();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out({total, n}, 0.0, needs_grad);
  auto ov = out.values();
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    auto pv = p.values();
    std::copy(pv.begin(), pv.end(), ov.begin() + off * n);
    off += p.rows();
  }
  if (needs_grad) {
    g.record("concat_rows", parts, out, [parts, out, n](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      std::size_t o = 0;
      for (const Tensor& p : parts) {
        if (p.requires_grad()) {
          auto& dp = gr.grad_buffer(p);
          for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += dy[o * n + i];
        }
        o += p.rows();
      }
    });
  }
  return out;
}

Tensor gather_rows(Graph& g, const Tensor& a, std::vector<std::size_t> index) {
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t r : index) {
    if (r >= m) {
      detail::throw_shape_error("gather_rows", "row index " + std::to_string(r) +
                                                   " out of range for " + shape_str(a.shape()));
    }
  }
  Tensor out({index.size(), n}, 0.0, a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy(av.begin() + index[i] * n, av.begin() + (index[i] + 1) * n, ov.begin() + i * n);
  if (out.requires_grad()) {
    g.record("gather_rows", {a}, out, [a, out, index = std::move(index), n](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& da = gr.grad_buffer(a);
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) da[index[i] * n + j] += dy[i * n + j];
    });
  }
  return out;
}

Tensor stack_rows(Graph& g, const std::vector<Tensor>& vectors) {
  if (vectors.empty()) detail::throw_shape_error("stack_rows", "no inputs");
  const std::size_t n = vectors[0].size();
  bool needs_grad = false;
  for (const Tensor& v : vectors) {
    if (v.ndim() != 1 || v.size() != n) {
      detail::throw_shape_error("stack_rows", "expected 1-D tensors of length " +
                                                  std::to_string(n) + ", got " +
                                                  shape_str(v.shape()));
    }
    needs_grad = needs_grad || v.requires_grad();
  }
  Tensor out({vectors.size(), n}, 0.0, needs_grad);
  auto ov = out.values();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    auto vv = vectors[i].values();
    std::copy(vv.begin(), vv.end(), ov.begin() + i * n);
  }
  if (needs_grad) {
    g.record("stack_rows", vectors, out, [vectors, out, n](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (!vectors[i].requires_grad()) continue;
        auto& dv = gr.grad_buffer(vectors[i]);
        for (std::size_t j = 0; j < n; ++j) dv[j] += dy[i * n + j];
      }
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s, a.requires_grad());
  if (out.requires_grad()) {
    g.record("sum", {a}, out, [a, out](Graph& gr) {
      const double dy = (*gr.find_grad(out))[0];
      auto& da = gr.grad_buffer(a);
      for (double& d : da) d += dy;
    });
  }
  return out;
}

Tensor mean_all(Graph& g, const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(s * inv, a.requires_grad());
  if (out.requires_grad()) {
    g.record("mean_all", {a}, out, [a, out, inv](Graph& gr) {
      const double dy = (*gr.find_grad(out))[0] * inv;
      auto& da = gr.grad_buffer(a);
      for (double& d : da) d += dy;
    });
  }
  return out;
}

Tensor dropout(Graph& g, const Tensor& a, double p, Mode mode, Rng* rng) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout: p must be in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::kEval || p == 0.0) return a;
  if (rng == nullptr) throw std::logic_error("dropout: train mode needs an Rng");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(a.size());
  for (double& m : mask) m = rng->uniform01() >= p ? keep_scale : 0.0;
  Tensor out(a.shape(), 0.0, a.requires_grad());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * mask[i];
  if (out.requires_grad()) {
    g.record("dropout", {a}, out, [a, out, mask = std::move(mask)](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& da = gr.grad_buffer(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * mask[i];
    });
  }
  return out;
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    detail::throw_shape_error("matmul", "incompatible shapes " + shape_str(a.shape()) +
                                            " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n}, 0.0, any_grad({&a, &b}));
  mm_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
  if (out.requires_grad()) {
    g.record("matmul", {a, b}, out, [a, b, out, m, k, n](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      if (a.requires_grad()) {
        // dA += dY * B^T
        mm_nt(dy.data(), b.values().data(), gr.grad_buffer(a).data(), m, n, k, true);
      }
      if (b.requires_grad()) {
        // dB += A^T * dY
        mm_tn(a.values().data(), dy.data(), gr.grad_buffer(b).data(), m, k, n, true);
      }
    });
  }
  return out;
}

namespace {

struct SoftmaxLayout {
  std::size_t slices;  // number of independent softmax slices
  std::size_t len;     // entries per slice
  std::size_t stride;  // distance between consecutive entries of a slice
  std::size_t step;    // distance between the first entries of two slices
};

SoftmaxLayout softmax_layout(const Tensor& a, int axis) {
  if (a.ndim() == 1) {
    if (axis != 0) detail::throw_shape_error("softmax", "axis must be 0 for 1-D input");
    return {1, a.size(), 1, 0};
  }
  if (a.ndim() != 2 || (axis != 0 && axis != 1)) {
    detail::throw_shape_error("softmax", "expected 1-D or 2-D with axis 0/1, got " +
                                             shape_str(a.shape()) + " axis " +
                                             std::to_string(axis));
  }
  if (axis == 1) return {a.rows(), a.cols(), 1, a.cols()};
  return {a.cols(), a.rows(), a.cols(), 1};
}

}  // namespace

Tensor softmax(Graph& g, const Tensor& a, int axis) {
  const SoftmaxLayout lay = softmax_layout(a, axis);
  Tensor out(a.shape(), 0.0, a.requires_grad());
  auto xv = a.values();
  auto ov = out.values();
  for (std::size_t s = 0; s < lay.slices; ++s) {
    const std::size_t base = s * lay.step;
    double mx = xv[base];
    for (std::size_t j = 1; j < lay.len; ++j) mx = std::max(mx, xv[base + j * lay.stride]);
    double sum = 0.0;
    for (std::size_t j = 0; j < lay.len; ++j) {
      const std::size_t idx = base + j * lay.stride;
      ov[idx] = std::exp(xv[idx] - mx);
      sum += ov[idx];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < lay.len; ++j) ov[base + j * lay.stride] *= inv;
  }
  if (out.requires_grad()) {
    g.record("softmax", {a}, out, [a, out, lay](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& da = gr.grad_buffer(a);
      auto yv = out.values();
      for (std::size_t s = 0; s < lay.slices; ++s) {
        const std::size_t base = s * lay.step;
        double dot = 0.0;
        for (std::size_t j = 0; j < lay.len; ++j) {
          const std::size_t idx = base + j * lay.stride;
          dot += dy[idx] * yv[idx];
        }
        for (std::size_t j = 0; j < lay.len; ++j) {
          const std::size_t idx = base + j * lay.stride;
          da[idx] += yv[idx] * (dy[idx] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm_rows(Graph& g, const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  if (x.ndim() != 2 || gamma.ndim() != 1 || beta.ndim() != 1 ||
      gamma.size() != x.cols() || beta.size() != x.cols()) {
    detail::throw_shape_error("layer_norm_rows",
                              "x " + shape_str(x.shape()) + " gamma " + shape_str(gamma.shape()) +
                                  " beta " + shape_str(beta.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m, n}, 0.0, any_grad({&x, &gamma, &beta}));
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[i * n + j] - mu) * inv;
      xhat[i * n + j] = h;
      ov[i * n + j] = gv[j] * h + bv[j];
    }
  }
  if (out.requires_grad()) {
    g.record("layer_norm_rows", {x, gamma, beta}, out,
             [x, gamma, beta, out, m, n, xhat = std::move(xhat),
              inv_std = std::move(inv_std)](Graph& gr) {
               const auto& dy = *gr.find_grad(out);
               auto gv2 = gamma.values();
               if (gamma.requires_grad()) {
                 auto& dg = gr.grad_buffer(gamma);
                 for (std::size_t i = 0; i < m; ++i)
                   for (std::size_t j = 0; j < n; ++j) dg[j] += dy[i * n + j] * xhat[i * n + j];
               }
               if (beta.requires_grad()) {
                 auto& db = gr.grad_buffer(beta);
                 for (std::size_t i = 0; i < m; ++i)
                   for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
               }
               if (x.requires_grad()) {
                 auto& dx = gr.grad_buffer(x);
                 for (std::size_t i = 0; i < m; ++i) {
                   double m1 = 0.0, m2 = 0.0;
                   for (std::size_t j = 0; j < n; ++j) {
                     const double gd = dy[i * n + j] * gv2[j];
                     m1 += gd;
                     m2 += gd * xhat[i * n + j];
                   }
                   m1 /= static_cast<double>(n);
                   m2 /= static_cast<double>(n);
                   for (std::size_t j = 0; j < n; ++j) {
                     const double gd = dy[i * n + j] * gv2[j];
                     dx[i * n + j] += inv_std[i] * (gd - m1 - xhat[i * n + j] * m2);
                   }
                 }
               }
             });
  }
  return out;
}

Tensor conv1d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t kernel, std::size_t groups) {
  if (kernel != 1) {
    throw std::invalid_argument("conv1d: only kernel size 1 is supported, got " +
                                std::to_string(kernel));
  }
  if (x.ndim() != 2 || weight.ndim() != 2) {
    detail::throw_shape_error("conv1d", "x " + shape_str(x.shape()) + " weight " +
                                            shape_str(weight.shape()));
  }
  const std::size_t cin = x.rows(), len = x.cols();
  const std::size_t cout = weight.rows();
  if (groups == 0 || cin % groups != 0 || cout % groups != 0) {
    detail::throw_shape_error("conv1d", "channels in " + std::to_string(cin) + " / out " +
                                            std::to_string(cout) + " not divisible by groups " +
                                            std::to_string(groups));
  }
  const std::size_t cig = cin / groups, cog = cout / groups;
  if (weight.cols() != cig) {
    detail::throw_shape_error("conv1d", "weight " + shape_str(weight.shape()) +
                                            " expected (" + std::to_string(cout) + ", " +
                                            std::to_string(cig) + ")");
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.size() != cout)) {
    detail::throw_shape_error("conv1d", "bias " + shape_str(bias.shape()) + " expected (" +
                                            std::to_string(cout) + ")");
  }
  bool needs_grad = any_grad({&x, &weight}) || (bias.defined() && bias.requires_grad());
  Tensor out({cout, len}, 0.0, needs_grad);
  auto xv = x.values();
  auto wv = weight.values();
  auto ov = out.values();
  for (std::size_t co = 0; co < cout; ++co) {
    const std::size_t base = (co / cog) * cig;
    double* orow = ov.data() + co * len;
    if (bias.defined()) {
      const double b = bias.values()[co];
      for (std::size_t l = 0; l < len; ++l) orow[l] = b;
    }
    for (std::size_t c = 0; c < cig; ++c) {
      const double w = wv[co * cig + c];
      const double* xrow = xv.data() + (base + c) * len;
      for (std::size_t l = 0; l < len; ++l) orow[l] += w * xrow[l];
    }
  }
  if (needs_grad) {
    std::vector<Tensor> ins = {x, weight};
    if (bias.defined()) ins.push_back(bias);
    g.record("conv1d", ins, out, [x, weight, bias, out, cout, cig, cog, len](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto xv2 = x.values();
      auto wv2 = weight.values();
      for (std::size_t co = 0; co < cout; ++co) {
        const std::size_t base = (co / cog) * cig;
        const double* dyrow = dy.data() + co * len;
        if (weight.requires_grad()) {
          auto& dw = gr.grad_buffer(weight);
          for (std::size_t c = 0; c < cig; ++c) {
            const double* xrow = xv2.data() + (base + c) * len;
            double s = 0.0;
            for (std::size_t l = 0; l < len; ++l) s += dyrow[l] * xrow[l];
            dw[co * cig + c] += s;
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto& db = gr.grad_buffer(bias);
          double s = 0.0;
          for (std::size_t l = 0; l < len; ++l) s += dyrow[l];
          db[co] += s;
        }
        if (x.requires_grad()) {
          auto& dx = gr.grad_buffer(x);
          for (std::size_t c = 0; c < cig; ++c) {
            const double w = wv2[co * cig + c];
            double* dxrow = dx.data() + (base + c) * len;
            for (std::size_t l = 0; l < len; ++l) dxrow[l] += w * dyrow[l];
          }
        }
      }
    });
  }
  return out;
}

BatchNormState BatchNormState::make(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor({channels}, 1.0, true);
  s.beta = Tensor({channels}, 0.0, true);
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

Tensor batchnorm1d(Graph& g, const Tensor& x, BatchNormState& state, Mode mode,
                   const std::vector<bool>* padding_mask) {
  if (x.ndim() != 2) detail::throw_shape_error("batchnorm1d", "expected C x L, got " + shape_str(x.shape()));
  const std::size_t c = x.rows(), len = x.cols();
  if (state.channels() != c) {
    detail::throw_shape_error("batchnorm1d", "state for " + std::to_string(state.channels()) +
                                                 " channels, input " + shape_str(x.shape()));
  }
  if (padding_mask && padding_mask->size() != len) {
    detail::throw_shape_error("batchnorm1d", "mask length " + std::to_string(padding_mask->size()) +
                                                 " != L " + std::to_string(len));
  }
  const Tensor gamma = state.gamma, beta = state.beta;
  bool needs_grad = any_grad({&x, &gamma, &beta});
  Tensor out({c, len}, 0.0, needs_grad);
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();
  auto ov = out.values();

  if (mode == Mode::kEval) {
    if (state.running_mean.size() != c || state.running_var.size() != c) {
      throw std::runtime_error("batchnorm1d: eval mode before any statistics exist");
    }
    std::vector<double> inv(c);
    for (std::size_t i = 0; i < c; ++i) inv[i] = 1.0 / std::sqrt(state.running_var[i] + state.eps);
    for (std::size_t i = 0; i < c; ++i) {
      const double mu = state.running_mean[i];
      for (std::size_t l = 0; l < len; ++l)
        ov[i * len + l] = gv[i] * (xv[i * len + l] - mu) * inv[i] + bv[i];
    }
    if (needs_grad) {
      std::vector<double> mean_copy = state.running_mean;
      g.record("batchnorm1d_eval", {x, gamma, beta}, out,
               [x, gamma, beta, out, c, len, inv = std::move(inv),
                mean_copy = std::move(mean_copy)](Graph& gr) {
                 const auto& dy = *gr.find_grad(out);
                 auto xv2 = x.values();
                 auto gv2 = gamma.values();
                 for (std::size_t i = 0; i < c; ++i) {
                   for (std::size_t l = 0; l < len; ++l) {
                     const double d = dy[i * len + l];
                     const double h = (xv2[i * len + l] - mean_copy[i]) * inv[i];
                     if (x.requires_grad()) gr.grad_buffer(x)[i * len + l] += gv2[i] * inv[i] * d;
                     if (gamma.requires_grad()) gr.grad_buffer(gamma)[i] += d * h;
                     if (beta.requires_grad()) gr.grad_buffer(beta)[i] += d;
                   }
                 }
               });
    }
    return out;
  }

  // Train mode: statistics over unmasked positions.
  std::size_t n_valid = len;
  if (padding_mask) {
    n_valid = 0;
    for (bool padded : *padding_mask) {
      if (!padded) ++n_valid;
    }
  }
  if (n_valid == 0) throw std::invalid_argument("batchnorm1d: every position is masked");
  const double inv_n = 1.0 / static_cast<double>(n_valid);
  std::vector<double> xhat(c * len);
  std::vector<double> inv_std(c);
  for (std::size_t i = 0; i < c; ++i) {
    double mu = 0.0;
    for (std::size_t l = 0; l < len; ++l) {
      if (padding_mask && (*padding_mask)[l]) continue;
      mu += xv[i * len + l];
    }
    mu *= inv_n;
    double var = 0.0;
    for (std::size_t l = 0; l < len; ++l) {
      if (padding_mask && (*padding_mask)[l]) continue;
      const double d = xv[i * len + l] - mu;
      var += d * d;
    }
    var *= inv_n;
    const double inv = 1.0 / std::sqrt(var + state.eps);
    inv_std[i] = inv;
    for (std::size_t l = 0; l < len; ++l) {
      const double h = (xv[i * len + l] - mu) * inv;
      xhat[i * len + l] = h;
      ov[i * len + l] = gv[i] * h + bv[i];
    }
    // Running stats use the unbiased variance, matching common practice.
    const double var_unbiased = n_valid > 1 ? var * static_cast<double>(n_valid) /
                                                  static_cast<double>(n_valid - 1)
                                            : var;
    state.running_mean[i] = (1.0 - state.momentum) * state.running_mean[i] + state.momentum * mu;
    state.running_var[i] = (1.0 - state.momentum) * state.running_var[i] + state.momentum * var_unbiased;
  }
  state.num_batches_tracked += 1;
  if (needs_grad) {
    std::vector<bool> mask_copy = padding_mask ? *padding_mask : std::vector<bool>();
    g.record("batchnorm1d", {x, gamma, beta}, out,
             [x, gamma, beta, out, c, len, inv_n, xhat = std::move(xhat),
              inv_std = std::move(inv_std), mask_copy = std::move(mask_copy)](Graph& gr) {
               const auto& dy = *gr.find_grad(out);
               auto gv2 = gamma.values();
               for (std::size_t i = 0; i < c; ++i) {
                 double s1 = 0.0, s2 = 0.0;
                 for (std::size_t l = 0; l < len; ++l) {
                   s1 += dy[i * len + l];
                   s2 += dy[i * len + l] * xhat[i * len + l];
                 }
                 if (gamma.requires_grad()) gr.grad_buffer(gamma)[i] += s2;
                 if (beta.requires_grad()) gr.grad_buffer(beta)[i] += s1;
                 if (x.requires_grad()) {
                   auto& dx = gr.grad_buffer(x);
                   const double gi = gv2[i] * inv_std[i];
                   for (std::size_t l = 0; l < len; ++l) {
                     const bool in_stats = mask_copy.empty() || !mask_copy[l];
                     double d = gi * dy[i * len + l];
                     if (in_stats) d -= gi * inv_n * (s1 + xhat[i * len + l] * s2);
                     dx[i * len + l] += d;
                   }
                 }
               }
             });
  }
  return out;
}

namespace {

// Adds a large negative sentinel to masked key columns so the subsequent
// softmax assigns them exactly zero weight.
Tensor add_key_mask(Graph& g, const Tensor& scores, const std::vector<bool>& mask) {
  const std::size_t m = scores.rows(), n = scores.cols();
  Tensor out(scores.shape(), 0.0, scores.requires_grad());
  auto sv = scores.values();
  auto ov = out.values();
  constexpr double kMaskedLogit = -1e30;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      ov[i * n + j] = mask[j] ? kMaskedLogit : sv[i * n + j];
  if (out.requires_grad()) {
    g.record("add_key_mask", {scores}, out, [scores, out, mask, m, n](Graph& gr) {
      const auto& dy = *gr.find_grad(out);
      auto& ds = gr.grad_buffer(scores);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (!mask[j]) ds[i * n + j] += dy[i * n + j];
    });
  }
  return out;
}

}  // namespace

MhaParams MhaParams::init(std::size_t channels, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  auto make_w = [&] {
    Tensor w({channels, channels}, 0.0, true);
    // Rounded through f32 so fresh parameters survive a checkpoint bit-exactly.
    for (double& v : w.values()) v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
    return w;
  };
  MhaParams p;
  p.wq = make_w();
  p.bq = Tensor({channels}, 0.0, true);
  p.wk = make_w();
  p.bk = Tensor({channels}, 0.0, true);
  p.wv = make_w();
  p.bv = Tensor({channels}, 0.0, true);
  p.wo = make_w();
  p.bo = Tensor({channels}, 0.0, true);
  return p;
}

MhaParams MhaParams::identity(std::size_t channels) {
  auto eye = [&] {
    Tensor w({channels, channels}, 0.0, true);
    for (std::size_t i = 0; i < channels; ++i) w.at(i, i) = 1.0;
    return w;
  };
  MhaParams p;
  p.wq = eye();
  p.bq = Tensor({channels}, 0.0, true);
  p.wk = eye();
  p.bk = Tensor({channels}, 0.0, true);
  p.wv = eye();
  p.bv = Tensor({channels}, 0.0, true);
  p.wo = eye();
  p.bo = Tensor({channels}, 0.0, true);
  return p;
}

Tensor multi_head_attention(Graph& g, const Tensor& q, const Tensor& k,
                            const Tensor& v, const MhaParams& params,
                            const AttentionSpec& spec,
                            const std::vector<bool>* key_padding_mask, Mode mode,
                            Rng* rng, std::vector<Tensor>* attention_out) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) {
    detail::throw_shape_error("multi_head_attention",
                              "q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) +
                                  " v " + shape_str(v.shape()));
  }
  const std::size_t c = q.cols();
  if (k.cols() != c || v.cols() != c || k.rows() != v.rows()) {
    detail::throw_shape_error("multi_head_attention",
                              "q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) +
                                  " v " + shape_str(v.shape()));
  }
  const std::size_t h = spec.num_heads;
  if (h == 0 || c % h != 0) {
    throw std::invalid_argument("multi_head_attention: channel count " + std::to_string(c) +
                                " not divisible by num_heads " + std::to_string(h));
  }
  if (key_padding_mask && key_padding_mask->size() != k.rows()) {
    throw std::invalid_argument("multi_head_attention: key mask length " +
                                std::to_string(key_padding_mask->size()) + " != Lk " +
                                std::to_string(k.rows()));
  }
  const std::size_t dh = c / h;
  const std::size_t d_scale = spec.scale_dim == 0 ? dh : spec.scale_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_scale));

  Tensor qp = add_row_vector(g, matmul(g, q, params.wq), params.bq);
  Tensor kp = add_row_vector(g, matmul(g, k, params.wk), params.bk);
  Tensor vp = add_row_vector(g, matmul(g, v, params.wv), params.bv);

  std::vector<Tensor> heads;
  heads.reserve(h);
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t c0 = head * dh, c1 = (head + 1) * dh;
    Tensor qh = slice_cols(g, qp, c0, c1);
    Tensor kh = slice_cols(g, kp, c0, c1);
    Tensor vh = slice_cols(g, vp, c0, c1);
    Tensor scores = scale(g, matmul(g, qh, transpose(g, kh)), inv_sqrt_d);
    if (key_padding_mask) scores = add_key_mask(g, scores, *key_padding_mask);
    Tensor probs = softmax(g, scores, 1);
    if (attention_out) attention_out->push_back(probs);
    probs = dropout(g, probs, spec.dropout_p, mode, rng);
    heads.push_back(matmul(g, probs, vh));
  }
  Tensor concat = h == 1 ? heads[0] : concat_cols(g, heads);
  return add_row_vector(g, matmul(g, concat, params.wo), params.bo);
}

}  // namespace acanet

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

#include <cmath>
#include <stdexcept>

#include "acanet/ops.hpp"

namespace acanet {

namespace {

double eval_loss(const std::function<Tensor(Graph&)>& loss_fn) {
  Graph g;
  Tensor loss = loss_fn(g);
  if (loss.size() != 1) {
    detail::throw_shape_error("grad_check", "loss_fn must return a scalar, got " +
                                                shape_str(loss.shape()));
  }
  return loss.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(Graph&)>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

  // Two forward passes must agree bit for bit; anything else means the
  // closure carries hidden state (live dropout, mutated norm statistics)
  // and the finite differences below would be meaningless.
  const double probe1 = eval_loss(loss_fn);
  const double probe2 = eval_loss(loss_fn);
  if (!(probe1 == probe2)) {
    throw std::runtime_error("grad_check: loss_fn is not deterministic (" +
                             std::to_string(probe1) + " vs " + std::to_string(probe2) + ")");
  }

  Graph g;
  Tensor loss = loss_fn(g);
  g.backward(loss);

  GradCheckReport report;
  for (const auto& [name, t] : inputs) {
    const std::vector<double>* analytic = g.find_grad(t);
    GradCheckEntry input_worst;
    input_worst.name = name;
    Tensor mut = t;  // shared storage: writes are visible to loss_fn
    auto vals = mut.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double fp = eval_loss(loss_fn);
      vals[i] = saved - eps;
      const double fm = eval_loss(loss_fn);
      vals[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic ? (*analytic)[i] : 0.0;
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-3});
      if (rel >= input_worst.rel_error) {
        input_worst.index = i;
        input_worst.analytic = a;
        input_worst.numeric = numeric;
        input_worst.rel_error = rel;
      }
    }
    if (input_worst.rel_error >= report.max_rel_error) {
      report.max_rel_error = input_worst.rel_error;
      report.worst = input_worst;
    }
    report.per_input.push_back(std::move(input_worst));
  }
  return report;
}

}  // namespace acanet

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

#ifndef ACANET_TENSOR_HPP
#define ACANET_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace acanet {

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense n-dimensional array of doubles, row-major. Copies are shallow:
// two Tensor handles may refer to the same storage, which is what ties
// parameters to their gradient buffers and makes weight sharing work.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0,
                  bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return s_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only

  std::span<double> values();
  std::span<const double> values() const;
  double& at(std::size_t i);
  double at(std::size_t i) const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  Tensor& set_requires_grad(bool b);

  // Storage identity: the key used by Graph gradient buffers.
  const void* id() const;
  bool same_storage(const Tensor& other) const { return id() == other.id(); }
  Tensor clone() const;  // deep copy
  bool all_finite() const;

 private:
  struct Storage {
    std::vector<std::size_t> shape;
    std::vector<double> v;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// Reverse-mode tape. Operations append nodes in execution order, which is
// by construction a topological order of the data flow. A Graph is owned
// by one thread of control: build, backward and gradient reads are not
// synchronized.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  // Records one operation. `inputs` are the differentiable inputs whose
  // gradients the backward function populates.
  void record(const char* op, std::vector<Tensor> inputs, Tensor output,
              BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs the tape in reverse. `loss` must be
  // a scalar produced on this graph.
  void backward(const Tensor& loss);

  bool has_grad(const Tensor& t) const;
  // Gradient of the last backward() w.r.t. `t`, same shape as `t`.
  Tensor grad(const Tensor& t) const;

  // Gradient buffer for backward functions; created zeroed on first use.
  std::vector<double>& grad_buffer(const Tensor& t);
  const std::vector<double>* find_grad(const Tensor& t) const;

  std::size_t num_nodes() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::pair<std::vector<double>, std::vector<std::size_t>>> grads_;
};

namespace detail {
[[noreturn]] void throw_shape_error(const char* op, const std::string& detail);
}

}  // namespace acanet

#endif  // ACANET_TENSOR_HPP

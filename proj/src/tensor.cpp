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

#include "acanet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace acanet {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace detail {
void throw_shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}
}  // namespace detail

namespace {
std::size_t checked_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) detail::throw_shape_error("Tensor", "zero extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
  s_->v.assign(checked_numel(shape), fill);
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  if (checked_numel(shape) != values.size()) {
    detail::throw_shape_error("Tensor::from",
                              "shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.s_ = std::make_shared<Storage>();
  t.s_->shape = std::move(shape);
  t.s_->v = std::move(values);
  t.s_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor::from({1}, {v}, requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
  if (!s_) throw std::logic_error("Tensor: use of undefined tensor");
  return s_->shape;
}

std::size_t Tensor::size() const {
  if (!s_) throw std::logic_error("Tensor: use of undefined tensor");
  return s_->v.size();
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) detail::throw_shape_error("Tensor::rows", "expected 2-D, got " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) detail::throw_shape_error("Tensor::cols", "expected 2-D, got " + shape_str(shape()));
  return shape()[1];
}

std::span<double> Tensor::values() {
  if (!s_) throw std::logic_error("Tensor: use of undefined tensor");
  return {s_->v.data(), s_->v.size()};
}

std::span<const double> Tensor::values() const {
  if (!s_) throw std::logic_error("Tensor: use of undefined tensor");
  return {s_->v.data(), s_->v.size()};
}

double& Tensor::at(std::size_t i) { return s_->v.at(i); }
double Tensor::at(std::size_t i) const { return s_->v.at(i); }

double& Tensor::at(std::size_t i, std::size_t j) {
  return s_->v.at(i * cols() + j);
}
double Tensor::at(std::size_t i, std::size_t j) const {
  return s_->v.at(i * cols() + j);
}

double Tensor::item() const {
  if (size() != 1) detail::throw_shape_error("Tensor::item", "tensor has shape " + shape_str(shape()));
  return s_->v[0];
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool b) {
  if (!s_) throw std::logic_error("Tensor: use of undefined tensor");
  s_->requires_grad = b;
  return *this;
}

const void* Tensor::id() const { return s_.get(); }

Tensor Tensor::clone() const {
  if (!s_) return Tensor();
  Tensor t;
  t.s_ = std::make_shared<Storage>(*s_);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Graph::record(const char* op, std::vector<Tensor> inputs, Tensor output,
                   BackwardFn backward) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    detail::throw_shape_error("backward", "loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  grads_.clear();
  grads_[loss.id()] = {std::vector<double>{1.0}, loss.shape()};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.requires_grad()) continue;
    if (grads_.find(it->output.id()) == grads_.end()) continue;  // not on the loss path
    it->backward(*this);
  }
}

bool Graph::has_grad(const Tensor& t) const { return grads_.count(t.id()) != 0; }

Tensor Graph::grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) {
    throw std::logic_error("Graph::grad: no gradient recorded for tensor of shape " +
                           shape_str(t.shape()));
  }
  return Tensor::from(t.shape(), it->second.first);
}

std::vector<double>& Graph::grad_buffer(const Tensor& t) {
  auto [it, inserted] = grads_.try_emplace(t.id());
  if (inserted) {
    it->second.first.assign(t.size(), 0.0);
    it->second.second = t.shape();
  }
  return it->second.first;
}

const std::vector<double>* Graph::find_grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second.first;
}

void Graph::clear() {
  nodes_.clear();
  grads_.clear();
}

}  // namespace acanet

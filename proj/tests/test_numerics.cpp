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
#include <vector>

#include <doctest.h>

#include "acanet/ops.hpp"
#include "acanet/rng.hpp"

using namespace acanet;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad = false,
                     double scale = 1.0) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

// Reference product, the slowest possible way.
std::vector<double> triple_loop_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a.at(i, p) * b.at(p, j);
  return out;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("matmul identity leaves the matrix unchanged") {
  Graph g;
  Rng rng(1);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor out = matmul(g, eye, a);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(out.values()[i] == a.values()[i]);
}

TEST_CASE("matmul 1x1") {
  Graph g;
  Tensor out = matmul(g, Tensor::from({1, 1}, {2.0}), Tensor::from({1, 1}, {3.0}));
  CHECK(out.item() == 6.0);
}

TEST_CASE("matmul matches the triple-loop reference") {
  Graph g;
  Rng rng(7);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor out = matmul(g, a, b);
  const std::vector<double> ref = triple_loop_matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(std::abs(out.values()[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("matmul reports both shapes on mismatch") {
  Graph g;
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    matmul(g, a, b);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 2)") != std::string::npos);
  }
}

TEST_CASE("softmax of an all-equal row is uniform") {
  Graph g;
  Tensor x = Tensor::from({1, 4}, {2.5, 2.5, 2.5, 2.5});
  Tensor y = softmax(g, x, 1);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax is stabilized against overflow") {
  Graph g;
  Tensor y = softmax(g, Tensor::from({1, 2}, {1000.0, 0.0}), 1);
  CHECK(y.all_finite());
  CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.values()[1] < 1e-300);
}

TEST_CASE("softmax matches an extended-precision exp-normalize reference") {
  Graph g;
  Tensor y = softmax(g, Tensor::from({1, 3}, {1.0, 2.0, 3.0}), 1);
  const long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
  const long double z = e1 + e2 + e3;
  CHECK(std::abs(y.values()[0] - static_cast<double>(e1 / z)) < 1e-14);
  CHECK(std::abs(y.values()[1] - static_cast<double>(e2 / z)) < 1e-14);
  CHECK(std::abs(y.values()[2] - static_cast<double>(e3 / z)) < 1e-14);
}

TEST_CASE("softmax rows sum to one for random inputs") {
  Graph g;
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor({5, 9}, rng, false, 50.0);
    Tensor y = softmax(g, x, 1);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 9; ++j) s += y.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax along axis 0 normalizes columns") {
  Graph g;
  Rng rng(12);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor y = softmax(g, x, 0);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += y.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("backward of sum is all ones") {
  Graph g;
  Tensor x({2, 3}, 1.5, true);
  Tensor loss = sum(g, x);
  g.backward(loss);
  Tensor dx = g.grad(x);
  CHECK(dx.shape() == x.shape());
  for (double v : dx.values()) CHECK(v == 1.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Graph g;
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor loss = sum(g, mul(g, x, x));
  g.backward(loss);
  Tensor dx = g.grad(x);
  CHECK(dx.values()[0] == doctest::Approx(2.0));
  CHECK(dx.values()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Graph g;
  Tensor x({2, 2}, 1.0, true);
  Tensor y = scale(g, x, 2.0);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
  Graph g;
  Tensor x = Tensor::from({2}, {3.0, -1.0}, true);
  Tensor loss = sum(g, add(g, x, x));
  g.backward(loss);
  for (double v : g.grad(x).values()) CHECK(v == 2.0);
}

TEST_CASE("grad_check on a linear map sits at the noise floor") {
  Tensor x = Tensor::from({3}, {0.4, -0.2, 1.1}, true);
  auto loss_fn = [&](Graph& g) { return sum(g, scale(g, x, 3.25)); };
  GradCheckReport r = grad_check(loss_fn, {{"x", x}});
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("grad_check of softmax row") {
  Tensor x = Tensor::from({1, 3}, {0.1, 0.2, 0.3}, true);
  Tensor probe = Tensor::from({1, 3}, {0.7, -0.3, 0.4});
  auto loss_fn = [&](Graph& g) { return sum(g, mul(g, softmax(g, x, 1), probe)); };
  GradCheckReport r = grad_check(loss_fn, {{"x", x}});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("grad_check detects a non-deterministic closure") {
  Tensor x = Tensor::from({1}, {1.0}, true);
  int calls = 0;
  auto loss_fn = [&](Graph& g) {
    ++calls;
    return scale(g, x, static_cast<double>(calls));
  };
  CHECK_THROWS_AS(grad_check(loss_fn, {{"x", x}}), std::runtime_error);
}

TEST_CASE("grad_check reports the worst offender coordinate") {
  Tensor x = Tensor::from({2}, {0.5, -0.8}, true);
  auto loss_fn = [&](Graph& g) { return sum(g, mul(g, x, x)); };
  GradCheckReport r = grad_check(loss_fn, {{"x", x}});
  CHECK(r.worst.name == "x");
  CHECK(r.per_input.size() == 1);
  CHECK(std::abs(r.worst.analytic - r.worst.numeric) <= r.max_rel_error * 1.0 + 1e-9);
}

TEST_CASE("conv1d with identity weight reproduces the input") {
  Graph g;
  Rng rng(3);
  Tensor x = random_tensor({4, 7}, rng);
  Tensor w({4, 4});
  for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0;
  Tensor y = conv1d(g, x, w, Tensor());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv1d sums channels") {
  Graph g;
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 10, 20, 30});
  Tensor w = Tensor::from({1, 2}, {1, 1});
  Tensor y = conv1d(g, x, w, Tensor());
  CHECK(y.shape() == std::vector<std::size_t>{1, 3});
  CHECK(y.values()[0] == 11.0);
  CHECK(y.values()[1] == 22.0);
  CHECK(y.values()[2] == 33.0);
}

TEST_CASE("grouped conv1d matches a grouped matrix-multiply reference") {
  Graph g;
  Rng rng(5);
  Tensor x = random_tensor({6, 9}, rng);
  Tensor w = random_tensor({2, 3}, rng);  // 2 groups: 3 in -> 1 out each
  Tensor b = random_tensor({2}, rng);
  Tensor y = conv1d(g, x, w, b, 1, 2);
  for (std::size_t co = 0; co < 2; ++co) {
    for (std::size_t l = 0; l < 9; ++l) {
      double ref = b.values()[co];
      for (std::size_t c = 0; c < 3; ++c) ref += w.at(co, c) * x.at(co * 3 + c, l);
      CHECK(std::abs(y.at(co, l) - ref) < 1e-12);
    }
  }
}

TEST_CASE("conv1d validates groups and kernel size") {
  Graph g;
  Tensor x({6, 4});
  Tensor w({2, 3});
  CHECK_THROWS_AS(conv1d(g, x, w, Tensor(), 1, 4), std::invalid_argument);
  CHECK_THROWS_AS(conv1d(g, x, w, Tensor(), 3, 2), std::invalid_argument);
}

TEST_CASE("batchnorm1d train normalizes a two-point channel to +-1") {
  Graph g;
  BatchNormState st = BatchNormState::make(1);
  Tensor x = Tensor::from({1, 2}, {1.0, -1.0});
  Tensor y = batchnorm1d(g, x, st, Mode::kTrain);
  CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y.values()[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("batchnorm1d eval with unit statistics is the identity") {
  Graph g;
  BatchNormState st = BatchNormState::make(3);
  Rng rng(9);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor y = batchnorm1d(g, x, st, Mode::kEval);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-5));
  }
}

TEST_CASE("batchnorm1d train matches a per-channel mean/var reference") {
  Graph g;
  BatchNormState st = BatchNormState::make(3);
  Rng rng(10);
  Tensor x = random_tensor({3, 8}, rng, false, 2.0);
  Tensor y = batchnorm1d(g, x, st, Mode::kTrain);
  for (std::size_t c = 0; c < 3; ++c) {
    double mu = 0.0;
    for (std::size_t l = 0; l < 8; ++l) mu += x.at(c, l);
    mu /= 8.0;
    double var = 0.0;
    for (std::size_t l = 0; l < 8; ++l) var += (x.at(c, l) - mu) * (x.at(c, l) - mu);
    var /= 8.0;
    for (std::size_t l = 0; l < 8; ++l) {
      const double ref = (x.at(c, l) - mu) / std::sqrt(var + 1e-5);
      CHECK(std::abs(y.at(c, l) - ref) < 1e-10);
    }
  }
}

TEST_CASE("batchnorm1d eval without statistics is an error") {
  Graph g;
  BatchNormState st;
  st.gamma = Tensor({2}, 1.0, true);
  st.beta = Tensor({2}, 0.0, true);
  Tensor x({2, 4}, 1.0);
  CHECK_THROWS_AS(batchnorm1d(g, x, st, Mode::kEval), std::runtime_error);
}

TEST_CASE("batchnorm1d masked statistics ignore padded positions") {
  Graph g;
  BatchNormState st = BatchNormState::make(1);
  // Padded tail carries garbage that must not shift the statistics.
  Tensor padded = Tensor::from({1, 4}, {1.0, -1.0, 99.0, -57.0});
  std::vector<bool> mask = {false, false, true, true};
  Tensor y = batchnorm1d(g, padded, st, Mode::kTrain, &mask);
  BatchNormState st2 = BatchNormState::make(1);
  Tensor clean = Tensor::from({1, 2}, {1.0, -1.0});
  Tensor y2 = batchnorm1d(g, clean, st2, Mode::kTrain);
  CHECK(y.values()[0] == doctest::Approx(y2.values()[0]).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(y2.values()[1]).epsilon(1e-12));
  CHECK(st.running_mean[0] == doctest::Approx(st2.running_mean[0]).epsilon(1e-12));
}

TEST_CASE("dropout is the identity in eval mode or at p = 0") {
  Graph g;
  Rng rng(2);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor a = dropout(g, x, 0.5, Mode::kEval, &rng);
  CHECK(a.same_storage(x));
  Tensor b = dropout(g, x, 0.0, Mode::kTrain, &rng);
  CHECK(b.same_storage(x));
}

TEST_CASE("train-mode dropout zeroes or rescales every entry") {
  Graph g;
  Rng rng(4);
  Tensor x({1, 200}, 1.0, true);
  Tensor y = dropout(g, x, 0.25, Mode::kTrain, &rng);
  std::size_t kept = 0;
  for (double v : y.values()) {
    const bool zero = v == 0.0;
    const bool scaled = std::abs(v - 1.0 / 0.75) < 1e-12;
    CHECK((zero || scaled));
    kept += scaled ? 1 : 0;
  }
  CHECK(kept > 100);
  CHECK(kept < 190);
}

TEST_CASE("elementwise and structural ops pass the gradient check") {
  Rng rng(21);
  Tensor a = random_tensor({3, 4}, rng, true);
  Tensor b = random_tensor({3, 4}, rng, true);
  Tensor bias = random_tensor({4}, rng, true);
  Tensor probe = random_tensor({3, 4}, rng);

  SUBCASE("add, mul, scale") {
    auto loss_fn = [&](Graph& g) {
      return sum(g, mul(g, add(g, a, scale(g, b, -0.7)), probe));
    };
    CHECK(grad_check(loss_fn, {{"a", a}, {"b", b}}).max_rel_error < 1e-4);
  }
  SUBCASE("sub and relu") {
    auto loss_fn = [&](Graph& g) { return sum(g, relu(g, sub(g, a, b))); };
    CHECK(grad_check(loss_fn, {{"a", a}, {"b", b}}).max_rel_error < 1e-4);
  }
  SUBCASE("add_row_vector and transpose") {
    auto loss_fn = [&](Graph& g) {
      return sum(g, mul(g, transpose(g, add_row_vector(g, a, bias)), transpose(g, probe)));
    };
    CHECK(grad_check(loss_fn, {{"a", a}, {"bias", bias}}).max_rel_error < 1e-4);
  }
  SUBCASE("slice, concat, gather, stack") {
    Tensor v1 = random_tensor({4}, rng, true);
    Tensor v2 = random_tensor({4}, rng, true);
    auto loss_fn = [&](Graph& g) {
      Tensor s = slice_cols(g, a, 1, 3);
      Tensor c = concat_cols(g, {s, s});
      Tensor r = concat_rows(g, {c, c});
      Tensor ga = gather_rows(g, r, {0, 5, 2, 2});
      Tensor st = stack_rows(g, {v1, v2});
      return add(g, sum(g, ga), sum(g, mul(g, st, st)));
    };
    CHECK(grad_check(loss_fn, {{"a", a}, {"v1", v1}, {"v2", v2}}).max_rel_error < 1e-4);
  }
  SUBCASE("matmul") {
    Tensor m1 = random_tensor({3, 5}, rng, true);
    Tensor m2 = random_tensor({5, 2}, rng, true);
    auto loss_fn = [&](Graph& g) { return sum(g, matmul(g, m1, m2)); };
    CHECK(grad_check(loss_fn, {{"m1", m1}, {"m2", m2}}).max_rel_error < 1e-4);
  }
  SUBCASE("softmax axis 0") {
    auto loss_fn = [&](Graph& g) { return sum(g, mul(g, softmax(g, a, 0), probe)); };
    CHECK(grad_check(loss_fn, {{"a", a}}).max_rel_error < 1e-4);
  }
  SUBCASE("mean_all and reshape") {
    auto loss_fn = [&](Graph& g) {
      return mean_all(g, mul(g, reshape(g, a, {12}), reshape(g, a, {12})));
    };
    CHECK(grad_check(loss_fn, {{"a", a}}).max_rel_error < 1e-4);
  }
}

TEST_CASE("layer_norm_rows passes the gradient check") {
  Rng rng(22);
  Tensor x = random_tensor({4, 6}, rng, true);
  Tensor gamma = random_tensor({6}, rng, true, 0.5);
  Tensor beta = random_tensor({6}, rng, true, 0.5);
  Tensor probe = random_tensor({4, 6}, rng);
  auto loss_fn = [&](Graph& g) {
    return sum(g, mul(g, layer_norm_rows(g, x, gamma, beta), probe));
  };
  GradCheckReport r = grad_check(loss_fn, {{"x", x}, {"gamma", gamma}, {"beta", beta}});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("conv1d and batchnorm1d pass the gradient check") {
  Rng rng(23);
  Tensor x = random_tensor({4, 5}, rng, true);
  SUBCASE("grouped conv") {
    Tensor w = random_tensor({2, 2}, rng, true);
    Tensor b = random_tensor({2}, rng, true);
    auto loss_fn = [&](Graph& g) { return sum(g, conv1d(g, x, w, b, 1, 2)); };
    CHECK(grad_check(loss_fn, {{"x", x}, {"w", w}, {"b", b}}).max_rel_error < 1e-4);
  }
  SUBCASE("batchnorm train mode") {
    BatchNormState proto = BatchNormState::make(4);
    proto.gamma = random_tensor({4}, rng, true, 0.8);
    proto.beta = random_tensor({4}, rng, true, 0.8);
    Tensor probe = random_tensor({4, 5}, rng);
    auto loss_fn = [&](Graph& g) {
      BatchNormState local = proto;  // running stats mutate on the copy only
      return sum(g, mul(g, batchnorm1d(g, x, local, Mode::kTrain), probe));
    };
    GradCheckReport r =
        grad_check(loss_fn, {{"x", x}, {"gamma", proto.gamma}, {"beta", proto.beta}});
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("batchnorm train mode with mask") {
    BatchNormState proto = BatchNormState::make(4);
    std::vector<bool> mask = {false, false, false, true, true};
    Tensor probe = random_tensor({4, 5}, rng);
    auto loss_fn = [&](Graph& g) {
      BatchNormState local = proto;
      return sum(g, mul(g, batchnorm1d(g, x, local, Mode::kTrain, &mask), probe));
    };
    GradCheckReport r =
        grad_check(loss_fn, {{"x", x}, {"gamma", proto.gamma}, {"beta", proto.beta}});
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("batchnorm eval mode") {
    BatchNormState proto = BatchNormState::make(4);
    for (std::size_t i = 0; i < 4; ++i) {
      proto.running_mean[i] = 0.3 * static_cast<double>(i);
      proto.running_var[i] = 1.0 + 0.2 * static_cast<double>(i);
    }
    auto loss_fn = [&](Graph& g) {
      BatchNormState local = proto;
      return sum(g, batchnorm1d(g, x, local, Mode::kEval));
    };
    CHECK(grad_check(loss_fn, {{"x", x}, {"gamma", proto.gamma}, {"beta", proto.beta}})
              .max_rel_error < 1e-4);
  }
}

TEST_CASE("forward results stay finite on finite inputs") {
  Rng rng(31);
  Graph g;
  Tensor a = random_tensor({6, 6}, rng, false, 100.0);
  CHECK(softmax(g, a, 1).all_finite());
  CHECK(matmul(g, a, a).all_finite());
  Tensor gamma({6}, 1.0);
  Tensor beta({6}, 0.0);
  CHECK(layer_norm_rows(g, a, gamma, beta).all_finite());
}

}  // TEST_SUITE

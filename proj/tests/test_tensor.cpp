// Copyright 2026 The QSV Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "qsv/rng.hpp"
#include "qsv/tensor.hpp"

using namespace qsv;
using qsv::testing::fd_grad;
using qsv::testing::max_rel_error;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0,
                     double hi = 1.0, bool requires_grad = true) {
  Tensor t(std::move(shape), requires_grad);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Fixed-weight scalar readout so asymmetric gradient bugs cannot cancel.
Tensor weighted_readout(Tape* tape, const Tensor& out, Rng& rng) {
  Tensor w(out.shape());
  for (float& v : w.values()) v = static_cast<float>(rng.uniform(0.5, 1.5));
  return sum(tape, mul(tape, out, w));
}

}  // namespace

TEST_CASE("matmul forward examples") {
  Tensor eye = Tensor::from({1, 0, 0, 1}, {2, 2});
  Tensor v = Tensor::from({3, 4}, {2, 1});
  Tensor r = matmul(nullptr, eye, v);
  CHECK(r.at(0) == 3.0f);
  CHECK(r.at(1) == 4.0f);

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor out = matmul(nullptr, a, v);
  CHECK(out.numel() == 1);
  CHECK(out.item() == 11.0f);

  CHECK_THROWS_AS(matmul(nullptr, a, a), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum(out) wrt a equals ones x b^T") {
  Rng rng(7);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2});
  Tape tape;
  Tensor loss = sum(&tape, matmul(&tape, a, b));
  tape.backward(loss);

  // Analytic: dL/da[i,l] = sum_j b[l,j].
  for (int i = 0; i < 3; ++i)
    for (int l = 0; l < 4; ++l) {
      double expect = 0.0;
      for (int j = 0; j < 2; ++j) expect += b.at(l * 2 + j);
      CHECK(a.grad()[i * 4 + l] ==
            doctest::Approx(expect).epsilon(1e-5));
    }

  auto fd = fd_grad(
      [&]() {
        return static_cast<double>(sum(nullptr, matmul(nullptr, a, b)).item());
      },
      a);
  CHECK(max_rel_error(a.grad(), fd) < 1e-3);
}

TEST_CASE("conv1d forward examples") {
  Tensor x = Tensor::from({1, 2, 3}, {3, 1});
  Tensor w1 = Tensor::from({1}, {1, 1, 1});
  Tensor r1 = conv1d(nullptr, x, w1, 1, 0);
  CHECK(r1.shape() == std::vector<int>{3, 1});
  CHECK(r1.at(0) == 1.0f);
  CHECK(r1.at(1) == 2.0f);
  CHECK(r1.at(2) == 3.0f);

  Tensor w2 = Tensor::from({1, 1}, {2, 1, 1});
  Tensor r2 = conv1d(nullptr, x, w2, 1, 0);
  CHECK(r2.shape() == std::vector<int>{2, 1});
  CHECK(r2.at(0) == 3.0f);
  CHECK(r2.at(1) == 5.0f);

  CHECK_THROWS_AS(conv1d(nullptr, x, w2, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(conv1d(nullptr, x, w2, 1, -1), std::invalid_argument);
}

TEST_CASE("conv1d output length and padding") {
  Rng rng(3);
  Tensor x = random_tensor(rng, {10, 2}, -1, 1, false);
  Tensor w = random_tensor(rng, {3, 2, 4}, -1, 1, false);
  CHECK(conv1d(nullptr, x, w, 1, 0).dim(0) == 8);
  CHECK(conv1d(nullptr, x, w, 1, 1).dim(0) == 10);
  CHECK(conv1d(nullptr, x, w, 2, 1).dim(0) == 5);
  CHECK(conv1d(nullptr, x, w, 1, 1, 2).dim(0) == 8);  // k_eff = 5
}

TEST_CASE("conv1d gradients match finite differences") {
  Rng rng(11);
  Tensor x = random_tensor(rng, {8, 2});
  Tensor w = random_tensor(rng, {3, 2, 3});
  Rng wrng(5);
  Tape tape;
  Tensor out = conv1d(&tape, x, w, 1, 1);
  Rng wrng2(5);
  Tensor loss = weighted_readout(&tape, out, wrng2);
  tape.backward(loss);

  auto rebuild = [&]() {
    Rng r(5);
    return weighted_readout(nullptr, conv1d(nullptr, x, w, 1, 1), r).item();
  };
  auto fdx = fd_grad(rebuild, x);
  auto fdw = fd_grad(rebuild, w);
  CHECK(max_rel_error(x.grad(), fdx) < 1e-3);
  CHECK(max_rel_error(w.grad(), fdw) < 1e-3);
}

TEST_CASE("elementwise primitive examples") {
  Tensor x = Tensor::from({-1, 2}, {2});
  Tensor r = relu(nullptr, x);
  CHECK(r.at(0) == 0.0f);
  CHECK(r.at(1) == 2.0f);

  CHECK(mean(nullptr, Tensor::from({1, 2, 3}, {3})).item() == 2.0f);
  CHECK(variance(nullptr, Tensor::from({1, 2, 3}, {3})).item() ==
        doctest::Approx(2.0 / 3.0));

  Tensor logits = Tensor::from({0, 0}, {2});
  CHECK(softmax_cross_entropy(nullptr, logits, 0).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  Tensor a = Tensor::from({1, 0}, {2});
  Tensor b = Tensor::from({0, 1}, {2});
  CHECK(cos_angle(nullptr, a, b).item() == doctest::Approx(0.0));
  CHECK(cos_angle(nullptr, a, a).item() == doctest::Approx(1.0));
  CHECK_THROWS_AS(cos_angle(nullptr, a, Tensor::zeros({2})),
                  std::runtime_error);
}

TEST_CASE("backward fills expected gradients") {
  SUBCASE("sum gives all-ones") {
    Tensor w = Tensor::from({0.3f, -0.7f, 2.0f, 0.0f}, {2, 2}, true);
    Tape tape;
    tape.backward(sum(&tape, w));
    for (float g : w.grad()) CHECK(g == 1.0f);
  }
  SUBCASE("sum of squares") {
    Tensor w = Tensor::from({1, -2}, {2}, true);
    Tape tape;
    tape.backward(sum(&tape, mul(&tape, w, w)));
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(-4.0));
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor w = Tensor::from({1, 2}, {2}, true);
    Tape tape;
    Tensor out = relu(&tape, w);
    CHECK_THROWS_AS(tape.backward(out), std::logic_error);
  }
  SUBCASE("backward twice rejected") {
    Tensor w = Tensor::from({1, 2}, {2}, true);
    Tape tape;
    Tensor loss = sum(&tape, w);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  }
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  Rng rng(23);
  Tensor x = random_tensor(rng, {1, 4}, -1, 1, false);
  Tensor w1 = random_tensor(rng, {4, 8});
  Tensor b1 = random_tensor(rng, {8}, -0.1, 0.1);
  Tensor w2 = random_tensor(rng, {8, 3});
  Tensor b2 = random_tensor(rng, {3}, -0.1, 0.1);

  auto forward = [&](Tape* tape) {
    Tensor h = relu(tape, add_bias(tape, matmul(tape, x, w1), b1));
    Tensor logits = add_bias(tape, matmul(tape, h, w2), b2);
    return softmax_cross_entropy(tape, logits, 1);
  };

  Tape tape;
  tape.backward(forward(&tape));
  auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
  CHECK(max_rel_error(w1.grad(), fd_grad(rebuild, w1)) < 1e-3);
  CHECK(max_rel_error(b1.grad(), fd_grad(rebuild, b1)) < 1e-3);
  CHECK(max_rel_error(w2.grad(), fd_grad(rebuild, w2)) < 1e-3);
  CHECK(max_rel_error(b2.grad(), fd_grad(rebuild, b2)) < 1e-3);
}

TEST_CASE("all primitives pass finite-difference checks") {
  Rng rng(31);

  SUBCASE("add / mul / scale / add_bias") {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {3, 4});
    Tensor bias = random_tensor(rng, {4});
    auto forward = [&](Tape* tape) {
      Tensor s = add(tape, mul(tape, a, b), scale(tape, a, 0.5));
      return sum(tape, add_bias(tape, s, bias));
    };
    Tape tape;
    tape.backward(forward(&tape));
    auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
    CHECK(max_rel_error(a.grad(), fd_grad(rebuild, a)) < 1e-3);
    CHECK(max_rel_error(b.grad(), fd_grad(rebuild, b)) < 1e-3);
    CHECK(max_rel_error(bias.grad(), fd_grad(rebuild, bias)) < 1e-3);
  }

  SUBCASE("relu away from the kink") {
    Tensor x(std::vector<int>{3, 3}, true);
    for (float& v : x.values()) {
      double u = rng.uniform(0.1, 1.0);
      v = static_cast<float>(rng.uniform() < 0.5 ? -u : u);
    }
    auto forward = [&](Tape* tape) {
      Rng r(17);
      return weighted_readout(tape, relu(tape, x), r);
    };
    Tape tape;
    tape.backward(forward(&tape));
    auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
    CHECK(max_rel_error(x.grad(), fd_grad(rebuild, x)) < 1e-3);
  }

  SUBCASE("mean / variance") {
    Tensor x = random_tensor(rng, {12});
    auto forward = [&](Tape* tape) {
      return add(tape, mean(tape, x), variance(tape, x));
    };
    Tape tape;
    tape.backward(forward(&tape));
    auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
    CHECK(max_rel_error(x.grad(), fd_grad(rebuild, x)) < 1e-3);
  }

  SUBCASE("batchnorm") {
    Tensor x = random_tensor(rng, {6, 3});
    Tensor gamma = random_tensor(rng, {3}, 0.5, 1.5);
    Tensor beta = random_tensor(rng, {3}, -0.2, 0.2);
    auto forward = [&](Tape* tape) {
      Rng r(19);
      return weighted_readout(tape, batchnorm(tape, x, gamma, beta), r);
    };
    Tape tape;
    tape.backward(forward(&tape));
    auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
    CHECK(max_rel_error(x.grad(), fd_grad(rebuild, x)) < 1e-3);
    CHECK(max_rel_error(gamma.grad(), fd_grad(rebuild, gamma)) < 1e-3);
    CHECK(max_rel_error(beta.grad(), fd_grad(rebuild, beta)) < 1e-3);
  }

  SUBCASE("stats_pool") {
    Tensor x = random_tensor(rng, {7, 3});
    auto forward = [&](Tape* tape) {
      Rng r(29);
      return weighted_readout(tape, stats_pool(tape, x), r);
    };
    Tape tape;
    tape.backward(forward(&tape));
    auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
    CHECK(max_rel_error(x.grad(), fd_grad(rebuild, x)) < 1e-3);
  }

  SUBCASE("cos_angle") {
    Tensor a = random_tensor(rng, {6});
    Tensor b = random_tensor(rng, {6});
    auto forward = [&](Tape* tape) { return cos_angle(tape, a, b); };
    Tape tape;
    tape.backward(forward(&tape));
    auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
    CHECK(max_rel_error(a.grad(), fd_grad(rebuild, a)) < 1e-3);
    CHECK(max_rel_error(b.grad(), fd_grad(rebuild, b)) < 1e-3);
  }

  SUBCASE("softmax_cross_entropy") {
    Tensor logits = random_tensor(rng, {5});
    auto forward = [&](Tape* tape) {
      return softmax_cross_entropy(tape, logits, 2);
    };
    Tape tape;
    tape.backward(forward(&tape));
    auto rebuild = [&]() { return static_cast<double>(forward(nullptr).item()); };
    CHECK(max_rel_error(logits.grad(), fd_grad(rebuild, logits)) < 1e-3);
  }
}

TEST_CASE("gradients accumulate across passes until zero_grad") {
  Tensor w = Tensor::from({1, 2, 3}, {3}, true);
  Tape t1;
  t1.backward(sum(&t1, w));
  CHECK(w.grad()[0] == 1.0f);
  // A second pass without zero_grad adds on top; the reset brings a
  // fresh pass back to the single-pass gradient.
  Tape t2;
  t2.backward(sum(&t2, w));
  CHECK(w.grad()[0] == 2.0f);
  w.zero_grad();
  Tape t3;
  t3.backward(sum(&t3, w));
  CHECK(w.grad()[0] == 1.0f);
}

TEST_CASE("forward results are deterministic") {
  Rng rng(41);
  Tensor a = random_tensor(rng, {5, 6}, -1, 1, false);
  Tensor b = random_tensor(rng, {6, 4}, -1, 1, false);
  Tensor r1 = matmul(nullptr, a, b);
  Tensor r2 = matmul(nullptr, a, b);
  for (int64_t i = 0; i < r1.numel(); ++i) CHECK(r1.at(i) == r2.at(i));
}

TEST_CASE("non-finite forward values raise an error") {
  Tensor big = Tensor::from({1e30f}, {1});
  CHECK_THROWS_AS(mul(nullptr, big, big), std::runtime_error);
  CHECK_THROWS_AS(scale(nullptr, big, 1e10), std::runtime_error);
}

TEST_CASE("stats_pool concatenates mean and std over time") {
  Tensor x = Tensor::from({1, 10, 3, 20}, {2, 2});
  Tensor p = stats_pool(nullptr, x, 0.0);
  CHECK(p.at(0) == doctest::Approx(2.0));
  CHECK(p.at(1) == doctest::Approx(15.0));
  CHECK(p.at(2) == doctest::Approx(1.0));
  CHECK(p.at(3) == doctest::Approx(5.0));
}

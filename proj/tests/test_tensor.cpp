// Copyright (c) 2026 The moatts Authors
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

#include <cmath>
#include <vector>

#include "doctest.h"
#include "moatts/rng.h"
#include "moatts/tensor.h"

using namespace moatts;

namespace {

Tensor rand_tensor(std::vector<size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("linear matches hand-computed examples") {
  Tensor x = Tensor::vector({1, 2});
  SUBCASE("identity weights") {
    Tensor w({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::vector({0, 0});
    Tensor y = linear(x, w, b);
    CHECK(y.data()[0] == doctest::Approx(1));
    CHECK(y.data()[1] == doctest::Approx(2));
  }
  SUBCASE("zero weights pass bias") {
    Tensor w({2, 2}, {0, 0, 0, 0});
    Tensor b = Tensor::vector({3, 4});
    Tensor y = linear(x, w, b);
    CHECK(y.data()[0] == doctest::Approx(3));
    CHECK(y.data()[1] == doctest::Approx(4));
  }
  SUBCASE("hand matrix multiply") {
    Tensor w({2, 2}, {1, 1, 1, -1});
    Tensor b = Tensor::vector({0, 0});
    Tensor y = linear(x, w, b);
    CHECK(y.data()[0] == doctest::Approx(3));
    CHECK(y.data()[1] == doctest::Approx(-1));
  }
  SUBCASE("shape mismatch names both shapes") {
    Tensor w({3, 2}, std::vector<double>(6, 0.0));
    Tensor b = Tensor::vector({0, 0});
    CHECK_THROWS_AS(linear(x, w, b), DimensionError);
  }
}

TEST_CASE("layer_norm examples") {
  Tensor gamma = Tensor::vector({1, 1, 1});
  Tensor beta = Tensor::vector({0, 0, 0});
  SUBCASE("constant row normalizes to zero") {
    Tensor y = layer_norm(Tensor::vector({5, 5, 5}), gamma, beta);
    for (double v : y.data()) CHECK(v == doctest::Approx(0));
  }
  SUBCASE("beta shift") {
    Tensor y = layer_norm(Tensor::vector({5, 5, 5}), gamma,
                          Tensor::vector({2, 2, 2}));
    for (double v : y.data()) CHECK(v == doctest::Approx(2));
  }
  SUBCASE("mean 2, std 1") {
    Tensor y = layer_norm(Tensor::vector({1, 3}), Tensor::vector({1, 1}),
                          Tensor::vector({0, 0}), 0.0);
    CHECK(y.data()[0] == doctest::Approx(-1));
    CHECK(y.data()[1] == doctest::Approx(1));
  }
}

TEST_CASE("softmax examples and invariants") {
  SUBCASE("uniform logits") {
    Tensor y = softmax_rows(Tensor::vector({0, 0, 0}));
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3));
  }
  SUBCASE("stability under large logits") {
    Tensor y = softmax_rows(Tensor::vector({1000, 0}));
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(0.0));
    CHECK(all_finite(y));
  }
  SUBCASE("direct evaluation e/(e+1)") {
    Tensor y = softmax_rows(Tensor::vector({1, 0}));
    CHECK(y.data()[0] == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(y.data()[1] == doctest::Approx(0.26894).epsilon(1e-5));
  }
  SUBCASE("rows sum to one, shift invariant") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor x = rand_tensor({3, 7}, rng, 3.0);
      Tensor y = softmax_rows(x);
      Tensor xs = add_scalar(x, rng.normal() * 10.0);
      Tensor ys = softmax_rows(xs);
      for (size_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (size_t c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
        CHECK(std::fabs(s - 1.0) < 1e-12);
      }
      for (size_t i = 0; i < y.size(); ++i)
        CHECK(std::fabs(y.data()[i] - ys.data()[i]) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm output statistics on random rows") {
  Rng rng(7);
  Tensor gamma = Tensor::full({16}, 1.0);
  Tensor beta = Tensor::zeros({16});
  for (int trial = 0; trial < 30; ++trial) {
    Tensor x = rand_tensor({4, 16}, rng, 2.0);
    Tensor y = layer_norm(x, gamma, beta, 1e-12);
    for (size_t r = 0; r < 4; ++r) {
      double mean = 0.0, var = 0.0;
      for (size_t j = 0; j < 16; ++j) mean += y.data()[r * 16 + j];
      mean /= 16.0;
      for (size_t j = 0; j < 16; ++j) {
        double c = y.data()[r * 16 + j] - mean;
        var += c * c;
      }
      var /= 16.0;
      CHECK(std::fabs(mean) <= 1e-9);
      CHECK(std::fabs(var - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gradient is ones") {
    Tensor x = Tensor::vector({1, 2, 3}, true);
    Graph g;
    {
      GraphScope s(g);
      Tensor loss = sum_all(x);
      g.backward_from(loss);
    }
    for (double v : x.grad()) CHECK(v == doctest::Approx(1.0));
  }
  SUBCASE("sum of squares gradient is 2x") {
    Tensor x = Tensor::vector({1, 2, 3}, true);
    Graph g;
    {
      GraphScope s(g);
      Tensor loss = sum_all(mul(x, x));
      g.backward_from(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(2));
    CHECK(x.grad()[1] == doctest::Approx(4));
    CHECK(x.grad()[2] == doctest::Approx(6));
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = Tensor::vector({1, 2}, true);
    Graph g;
    GraphScope s(g);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(g.backward_from(y), ContractError);
  }
  SUBCASE("duplicated subexpression doubles the gradient exactly") {
    Tensor x = Tensor::vector({0.5, -1.25, 2}, true);
    auto run = [&x](bool duplicated) {
      x.zero_grad();
      Graph g;
      GraphScope s(g);
      Tensor term = sum_all(mul(x, x));
      Tensor loss = duplicated ? add(term, term) : term;
      g.backward_from(loss);
      return x.grad();
    };
    auto g1 = run(false);
    auto g2 = run(true);
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);
  }
}

TEST_CASE("finite_diff_check oracle") {
  SUBCASE("sum of squares") {
    Tensor x = Tensor::vector({1, 2});
    auto f = [](Tensor& t) { return sum_all(mul(t, t)); };
    auto rep = finite_diff_check(f, x);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err <= 1e-6);
  }
  SUBCASE("constant function") {
    Tensor x = Tensor::vector({1, 2});
    auto f = [](Tensor& t) { return mul_scalar(sum_all(t), 0.0); };
    auto rep = finite_diff_check(f, x);
    CHECK(rep.pass);
  }
  SUBCASE("layer_norm after linear chain") {
    Rng rng(3);
    Tensor x = rand_tensor({2, 5}, rng);
    Tensor w = rand_tensor({5, 4}, rng, 0.5);
    Tensor b = rand_tensor({4}, rng, 0.1);
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    Tensor probe = rand_tensor({2, 4}, rng);
    auto f = [&](Tensor& t) {
      return sum_all(mul(layer_norm(linear(t, w, b), gamma, beta), probe));
    };
    CHECK(finite_diff_check(f, x, 1e-5, 1e-4).pass);
  }
  SUBCASE("non-deterministic f detected") {
    Tensor x = Tensor::vector({1.0});
    int calls = 0;
    auto f = [&calls](Tensor& t) {
      ++calls;
      return add_scalar(sum_all(t), static_cast<double>(calls));
    };
    CHECK_THROWS_AS(finite_diff_check(f, x), OracleError);
  }
}

TEST_CASE("autodiff matches finite differences on randomized compositions") {
  Rng rng(2024);
  int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Tensor x = rand_tensor({3, 6}, rng);
    Tensor w = rand_tensor({6, 5}, rng, 0.6);
    Tensor b = rand_tensor({5}, rng, 0.2);
    Tensor gamma = rand_tensor({5}, rng, 0.3);
    for (auto& v : gamma.data()) v += 1.0;
    Tensor beta = rand_tensor({5}, rng, 0.2);
    Tensor probe = rand_tensor({3, 5}, rng);
    int which = static_cast<int>(rng.below(5));
    auto f = [&](Tensor& t) -> Tensor {
      Tensor h = linear(t, w, b);
      switch (which) {
        case 0: h = relu(h); break;
        case 1: h = tanh_t(h); break;
        case 2: h = sigmoid(h); break;
        case 3: h = softmax_rows(h); break;
        default: h = layer_norm(h, gamma, beta); break;
      }
      return sum_all(mul(h, probe));
    };
    auto rep = finite_diff_check(f, x, 1e-5, 1e-4);
    CHECK_MESSAGE(rep.pass, "trial ", trial, " op ", which, " max_rel_err ",
                  rep.max_rel_err);
  }
}

TEST_CASE("finite differences cover structural ops") {
  Rng rng(17);
  SUBCASE("conv1d_same") {
    Tensor x = rand_tensor({6, 3}, rng);
    Tensor w = rand_tensor({3, 3, 4}, rng, 0.4);
    Tensor b = rand_tensor({4}, rng, 0.1);
    Tensor probe = rand_tensor({6, 4}, rng);
    auto fx = [&](Tensor& t) { return sum_all(mul(conv1d_same(t, w, b), probe)); };
    CHECK(finite_diff_check(fx, x).pass);
    auto fw = [&](Tensor& t) { return sum_all(mul(conv1d_same(x, t, b), probe)); };
    CHECK(finite_diff_check(fw, w).pass);
  }
  SUBCASE("matmul_nt, concat, slices, repeat") {
    Tensor x = rand_tensor({4, 3}, rng);
    Tensor y = rand_tensor({5, 3}, rng);
    Tensor probe = rand_tensor({4, 5}, rng);
    auto f = [&](Tensor& t) { return sum_all(mul(matmul_nt(t, y), probe)); };
    CHECK(finite_diff_check(f, x).pass);

    Tensor probe2 = rand_tensor({7, 6}, rng);
    auto g = [&](Tensor& t) {
      Tensor c = concat_cols({t, t});
      Tensor r = repeat_rows(slice_rows(c, 0, 3), {3, 2, 2});
      return sum_all(mul(r, probe2));
    };
    CHECK(finite_diff_check(g, x).pass);
  }
  SUBCASE("normalize_sum and scatter") {
    Tensor v = Tensor::vector({0.5, 0.2, 0.15, 0.1});
    Tensor probe = rand_tensor({6}, rng);
    auto f = [&](Tensor& t) {
      Tensor sel = select_elems(t, {0, 2});
      Tensor nrm = normalize_sum(sel);
      Tensor full = scatter_1d(6, {1, 4}, nrm);
      return sum_all(mul(full, probe));
    };
    CHECK(finite_diff_check(f, v).pass);
  }
  SUBCASE("importance loss") {
    Tensor rows({3, 4}, {0.5, 0.2, 0.2, 0.1, 0.3, 0.3, 0.2, 0.2,
                         0.1, 0.4, 0.4, 0.1});
    auto f = [](Tensor& t) { return importance_loss(t); };
    CHECK(finite_diff_check(f, rows).pass);
  }
}

TEST_CASE("repeat_rows edge cases") {
  Tensor h({3, 2}, {1, 1, 2, 2, 3, 3});
  SUBCASE("definition") {
    Tensor y = repeat_rows(h, {2, 1, 3});
    CHECK(y.extent(0) == 6);
    CHECK(y.data()[0] == 1);
    CHECK(y.data()[4] == 2);
    CHECK(y.data()[6] == 3);
  }
  SUBCASE("zero duration drops the row") {
    Tensor y = repeat_rows(h, {1, 0, 2});
    CHECK(y.extent(0) == 3);
    CHECK(y.data()[0] == 1);
    CHECK(y.data()[2] == 3);
  }
  SUBCASE("all-zero durations rejected") {
    CHECK_THROWS_AS(repeat_rows(h, {0, 0, 0}), ContractError);
  }
}

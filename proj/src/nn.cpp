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

#include "moatts/nn.h"

#include <cmath>

namespace moatts {

Tensor init_uniform(std::vector<size_t> shape, size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape), true);
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

LinearLayer::LinearLayer(size_t in, size_t out, Rng& rng) {
  w = init_uniform({in, out}, in, rng);
  b = init_uniform({out}, in, rng);
}

LinearLayer LinearLayer::zero_init(size_t in, size_t out) {
  LinearLayer l;
  l.w = Tensor::zeros({in, out}, true);
  l.b = Tensor::zeros({out}, true);
  return l;
}

void LinearLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

LayerNormLayer::LayerNormLayer(size_t d) {
  gamma = Tensor::full({d}, 1.0, true);
  beta = Tensor::zeros({d}, true);
}

void LayerNormLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

Conv1dLayer::Conv1dLayer(size_t kernel, size_t in, size_t out, Rng& rng) {
  w = init_uniform({kernel, in, out}, kernel * in, rng);
  b = init_uniform({out}, kernel * in, rng);
}

void Conv1dLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

GruLayer::GruLayer(size_t input_, size_t hidden_, Rng& rng)
    : input(input_), hidden(hidden_) {
  ih = LinearLayer(input, 3 * hidden, rng);
  hh = LinearLayer(hidden, 3 * hidden, rng);
}

Tensor GruLayer::forward(const Tensor& x, bool reversed) const {
  if (x.ndim() != 2 || x.extent(1) != input)
    throw DimensionError("gru: input " + shape_str(x.shape()) + " expected [T," +
                         std::to_string(input) + "]");
  size_t t_len = x.extent(0);
  Tensor h = Tensor::zeros({1, hidden});
  std::vector<Tensor> states(t_len);
  for (size_t step = 0; step < t_len; ++step) {
    size_t t = reversed ? t_len - 1 - step : step;
    Tensor xt = slice_rows(x, t, t + 1);
    Tensor gi = ih.forward(xt);  // [1, 3H]
    Tensor gh = hh.forward(h);
    Tensor r = sigmoid(add(slice_cols(gi, 0, hidden), slice_cols(gh, 0, hidden)));
    Tensor z = sigmoid(add(slice_cols(gi, hidden, 2 * hidden),
                           slice_cols(gh, hidden, 2 * hidden)));
    Tensor n = tanh_t(add(slice_cols(gi, 2 * hidden, 3 * hidden),
                          mul(r, slice_cols(gh, 2 * hidden, 3 * hidden))));
    // h = (1 - z) * n + z * h
    Tensor one_minus_z = add_scalar(mul_scalar(z, -1.0), 1.0);
    h = add(mul(one_minus_z, n), mul(z, h));
    states[t] = reshape(h, {hidden});
  }
  return stack_rows(states);
}

void GruLayer::collect(const std::string& prefix, NamedParams& out) const {
  ih.collect(prefix + ".ih", out);
  hh.collect(prefix + ".hh", out);
}

BiGruLayer::BiGruLayer(size_t input, size_t hidden, Rng& rng)
    : fw(input, hidden, rng), bw(input, hidden, rng) {}

Tensor BiGruLayer::forward(const Tensor& x) const {
  return concat_cols({fw.forward(x, false), bw.forward(x, true)});
}

void BiGruLayer::collect(const std::string& prefix, NamedParams& out) const {
  fw.collect(prefix + ".fw", out);
  bw.collect(prefix + ".bw", out);
}

}  // namespace moatts

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

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moatts/rng.h"
#include "moatts/tensor.h"

namespace moatts {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Fan-in uniform init, U(-1/sqrt(in), 1/sqrt(in)).
Tensor init_uniform(std::vector<size_t> shape, size_t fan_in, Rng& rng);

struct LinearLayer {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  LinearLayer() = default;
  LinearLayer(size_t in, size_t out, Rng& rng);
  static LinearLayer zero_init(size_t in, size_t out);

  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const { return w.size() + b.size(); }
};

struct LayerNormLayer {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNormLayer() = default;
  explicit LayerNormLayer(size_t d);

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const { return gamma.size() + beta.size(); }
};

struct Conv1dLayer {
  Tensor w;  // [K, Cin, Cout]
  Tensor b;  // [Cout]

  Conv1dLayer() = default;
  Conv1dLayer(size_t kernel, size_t in, size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const { return conv1d_same(x, w, b); }
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const { return w.size() + b.size(); }
};

// Single-direction GRU; gates in (r, z, n) order packed into one projection.
struct GruLayer {
  size_t input = 0, hidden = 0;
  LinearLayer ih;  // input  -> 3H
  LinearLayer hh;  // hidden -> 3H

  GruLayer() = default;
  GruLayer(size_t input, size_t hidden, Rng& rng);

  // x: [T, input]; returns hidden states [T, hidden]. reversed walks the
  // sequence back to front but emits states in forward time order.
  Tensor forward(const Tensor& x, bool reversed = false) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const { return ih.param_count() + hh.param_count(); }
};

struct BiGruLayer {
  GruLayer fw, bw;

  BiGruLayer() = default;
  BiGruLayer(size_t input, size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;  // [T, 2*hidden]
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const { return fw.param_count() + bw.param_count(); }
};

}  // namespace moatts

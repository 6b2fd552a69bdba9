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

#include <optional>
#include <string>
#include <vector>

#include "moatts/nn.h"

namespace moatts {

enum class GateMode { kDense, kSparse };

struct MoAConfig {
  size_t n_adapters = 8;
  GateMode mode = GateMode::kSparse;
  size_t top_k = 3;
  size_t bottleneck = 2;
  // Insertion sites: "decoder", "predictors" or "both".
  std::string sites = "both";
};

// Two-layer bottleneck block with pre-norm: up(relu(down(norm(x)))).
// The residual connection lives in MoAModule, not here. Up-projection starts
// at zero so an inserted module is an exact identity.
struct Adapter {
  size_t dim = 0, bottleneck = 0;
  LayerNormLayer norm;
  LinearLayer down;
  LinearLayer up;

  Adapter() = default;
  Adapter(size_t dim, size_t bottleneck, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const;
};

struct GateResult {
  Tensor weights;                 // [N], zeros at pruned slots
  std::vector<size_t> survivors;  // ascending indices of nonzero slots
};

struct GatingNetwork {
  size_t n = 0;
  GateMode mode = GateMode::kDense;
  size_t top_k = 0;
  LinearLayer proj;  // d_emb -> N, zero-init (uniform routing at start)

  GatingNetwork() = default;
  GatingNetwork(size_t d_emb, size_t n, GateMode mode, size_t top_k);

  // Dense: softmax of the projection. Sparse: softmax, keep the top_k
  // largest (ties broken toward the lowest index), renormalize survivors.
  // The survivor set is treated as constant during backward.
  GateResult forward(const Tensor& x_e) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const { return proj.param_count(); }
};

struct MoAModule {
  std::string site_id;
  std::vector<Adapter> adapters;
  GatingNetwork gate;

  MoAModule() = default;
  MoAModule(std::string site_id, size_t dim, size_t d_emb,
            const MoAConfig& cfg, Rng& rng);

  // x: [T, D] (or [D]); one x_e per utterance. Pruned adapters are never
  // evaluated. When gate_out is given the routing result is reported there.
  Tensor forward(const Tensor& x, const Tensor& x_e,
                 GateResult* gate_out = nullptr) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const;
};

// importance_loss(gate_rows) lives in tensor.h as a primitive op; gate rows
// are the post-renormalization weights actually applied, one row per batch
// item.

struct MoaFlops {
  double infer_macs = 0;
  double train_macs = 0;
  double adapter_infer_macs = 0;  // adapter work only, excluding the gate
  double gate_macs = 0;
};

// Analytic multiply-accumulate counts for one forward over seq_len frames.
// `active` is the number of adapters actually evaluated per frame (k in
// sparse mode, N in dense mode; 0 models a fully pruned site).
MoaFlops moa_flops_analytic(size_t dim, size_t bottleneck, size_t n,
                            size_t active, size_t d_emb, size_t seq_len);
MoaFlops moa_flops(const MoAModule& m, size_t seq_len, size_t d_emb);

}  // namespace moatts

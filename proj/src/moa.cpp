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

#include "moatts/moa.h"

#include <algorithm>
#include <numeric>

namespace moatts {

Adapter::Adapter(size_t dim_, size_t bottleneck_, Rng& rng)
    : dim(dim_), bottleneck(bottleneck_) {
  if (bottleneck >= dim)
    throw ConfigError("adapter bottleneck " + std::to_string(bottleneck) +
                      " must be smaller than dim " + std::to_string(dim));
  norm = LayerNormLayer(dim);
  down = LinearLayer(dim, bottleneck, rng);
  up = LinearLayer::zero_init(bottleneck, dim);
}

Tensor Adapter::forward(const Tensor& x) const {
  return up.forward(relu(down.forward(norm.forward(x))));
}

void Adapter::collect(const std::string& prefix, NamedParams& out) const {
  norm.collect(prefix + ".norm", out);
  down.collect(prefix + ".down", out);
  up.collect(prefix + ".up", out);
}

size_t Adapter::param_count() const {
  return norm.param_count() + down.param_count() + up.param_count();
}

GatingNetwork::GatingNetwork(size_t d_emb, size_t n_, GateMode mode_,
                             size_t top_k_)
    : n(n_), mode(mode_), top_k(top_k_) {
  if (mode == GateMode::kSparse && (top_k < 1 || top_k > n))
    throw ConfigError("gating: top_k " + std::to_string(top_k) +
                      " outside [1, " + std::to_string(n) + "]");
  proj = LinearLayer::zero_init(d_emb, n);
}

GateResult GatingNetwork::forward(const Tensor& x_e) const {
  Tensor soft = softmax_rows(proj.forward(x_e));  // [N]
  GateResult result;
  if (mode == GateMode::kDense || top_k == n) {
    result.weights = soft;
    result.survivors.resize(n);
    std::iota(result.survivors.begin(), result.survivors.end(), 0);
    return result;
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Ties broken toward the lowest adapter index: stable sort by value.
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return soft.data()[a] > soft.data()[b];
  });
  std::vector<size_t> keep(order.begin(), order.begin() + top_k);
  std::sort(keep.begin(), keep.end());
  Tensor renorm = normalize_sum(select_elems(soft, keep));
  result.weights = scatter_1d(n, keep, renorm);
  result.survivors = std::move(keep);
  return result;
}

void GatingNetwork::collect(const std::string& prefix, NamedParams& out) const {
  proj.collect(prefix + ".proj", out);
}

MoAModule::MoAModule(std::string site_id_, size_t dim, size_t d_emb,
                     const MoAConfig& cfg, Rng& rng)
    : site_id(std::move(site_id_)) {
  if (cfg.n_adapters == 0) throw ConfigError("moa: need at least one adapter");
  adapters.reserve(cfg.n_adapters);
  for (size_t i = 0; i < cfg.n_adapters; ++i)
    adapters.emplace_back(dim, cfg.bottleneck, rng);
  gate = GatingNetwork(d_emb, cfg.n_adapters, cfg.mode, cfg.top_k);
}

Tensor MoAModule::forward(const Tensor& x, const Tensor& x_e,
                          GateResult* gate_out) const {
  size_t d = x.shape().back();
  if (d != adapters.front().dim)
    throw DimensionError("moa: input width " + std::to_string(d) +
                         " does not match adapter dim " +
                         std::to_string(adapters.front().dim));
  GateResult g = gate.forward(x_e);
  Tensor y = x;
  for (size_t i : g.survivors) {
    Tensor wi = select_elems(g.weights, {i});
    y = add(y, scale_st(adapters[i].forward(x), wi));
  }
  if (gate_out) *gate_out = std::move(g);
  return y;
}

void MoAModule::collect(const std::string& prefix, NamedParams& out) const {
  for (size_t i = 0; i < adapters.size(); ++i)
    adapters[i].collect(prefix + ".adapter" + std::to_string(i), out);
  gate.collect(prefix + ".gate", out);
}

size_t MoAModule::param_count() const {
  size_t total = gate.param_count();
  for (const auto& a : adapters) total += a.param_count();
  return total;
}

MoaFlops moa_flops_analytic(size_t dim, size_t bottleneck, size_t n,
                            size_t active, size_t d_emb, size_t seq_len) {
  double d = static_cast<double>(dim);
  double b = static_cast<double>(bottleneck);
  // Per frame: norm scale+shift (2D) plus the two projections.
  double adapter_frame = 2.0 * d * b + 2.0 * d;
  MoaFlops f;
  f.gate_macs = static_cast<double>(d_emb) * static_cast<double>(n);
  f.adapter_infer_macs = static_cast<double>(active) * adapter_frame *
                         static_cast<double>(seq_len);
  f.infer_macs = f.adapter_infer_macs + f.gate_macs;
  // Pruned adapters are skipped in training too; the extra cost is the
  // importance-loss bookkeeping over the N gate weights.
  f.train_macs = f.infer_macs + 2.0 * static_cast<double>(n);
  return f;
}

MoaFlops moa_flops(const MoAModule& m, size_t seq_len, size_t d_emb) {
  size_t active =
      (m.gate.mode == GateMode::kSparse) ? m.gate.top_k : m.gate.n;
  return moa_flops_analytic(m.adapters.front().dim,
                            m.adapters.front().bottleneck, m.gate.n, active,
                            d_emb, seq_len);
}

}  // namespace moatts

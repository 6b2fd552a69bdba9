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

#include "moatts/speaker_embed.h"

namespace moatts {

Tensor weighted_sum(const LayeredFeatures& lf, const Tensor& layer_logits) {
  if (lf.features.ndim() != 3)
    throw DimensionError("weighted_sum: features must be [L,T,F], got " +
                         shape_str(lf.features.shape()));
  size_t l = lf.layers(), t = lf.frames(), f = lf.feat();
  if (layer_logits.shape() != std::vector<size_t>{l})
    throw DimensionError("weighted_sum: " + std::to_string(l) +
                         " layers but logits " +
                         shape_str(layer_logits.shape()));
  Tensor w = softmax_rows(layer_logits);            // [L]
  Tensor flat = reshape(lf.features, {l, t * f});   // [L, T*F]
  Tensor mixed = matmul(reshape(w, {1, l}), flat);  // [1, T*F]
  return reshape(mixed, {t, f});
}

EmbeddingModule::EmbeddingModule(size_t layers, size_t feat, size_t d_emb_,
                                 Rng& rng)
    : d_emb(d_emb_) {
  if (d_emb % 2 != 0)
    throw ConfigError("embedding dim must be even, got " +
                      std::to_string(d_emb));
  layer_logits = Tensor::zeros({layers}, true);
  gru = BiGruLayer(feat, d_emb / 2, rng);
  attn_v = init_uniform({d_emb}, d_emb, rng);
  out = LinearLayer(d_emb, d_emb, rng);
}

Tensor EmbeddingModule::forward(const LayeredFeatures& lf,
                                Tensor* attn_out) const {
  if (lf.frames() == 0)
    throw ContractError("embedding: reference has no frames");
  Tensor mixed = weighted_sum(lf, layer_logits);  // [T, F]
  Tensor h = gru.forward(mixed);                  // [T, d_emb]
  size_t t = h.extent(0);
  Tensor scores = matmul(h, reshape(attn_v, {d_emb, 1}));  // [T, 1]
  Tensor attn = softmax_rows(reshape(scores, {1, t}));     // [1, T]
  if (attn_out) *attn_out = reshape(attn, {t});
  Tensor pooled = matmul(attn, h);  // [1, d_emb]
  return reshape(out.forward(pooled), {d_emb});
}

void EmbeddingModule::collect(const std::string& prefix,
                              NamedParams& out_params) const {
  out_params.emplace_back(prefix + ".layer_logits", layer_logits);
  gru.collect(prefix + ".gru", out_params);
  out_params.emplace_back(prefix + ".attn_v", attn_v);
  out.collect(prefix + ".out", out_params);
}

size_t EmbeddingModule::param_count() const {
  return layer_logits.size() + gru.param_count() + attn_v.size() +
         out.param_count();
}

}  // namespace moatts

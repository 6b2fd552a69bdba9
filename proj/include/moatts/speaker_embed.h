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

#include "moatts/nn.h"

namespace moatts {

// Variable-length stack of reference-speech feature layers, shape [L, T, F].
struct LayeredFeatures {
  Tensor features;  // 3-D

  size_t layers() const { return features.extent(0); }
  size_t frames() const { return features.extent(1); }
  size_t feat() const { return features.extent(2); }
};

// Softmax over the learnable per-layer logits, then sum across layers.
Tensor weighted_sum(const LayeredFeatures& lf, const Tensor& layer_logits);

// Layer weighting -> bidirectional GRU -> attention pooling -> projection.
// Hidden width is d_emb/2 per direction so the concatenation is d_emb wide.
struct EmbeddingModule {
  size_t d_emb = 0;
  Tensor layer_logits;  // [L]
  BiGruLayer gru;
  Tensor attn_v;    // [d_emb] scoring vector
  LinearLayer out;  // d_emb -> d_emb

  EmbeddingModule() = default;
  EmbeddingModule(size_t layers, size_t feat, size_t d_emb, Rng& rng);

  // Returns the speaker embedding x_e, shape [d_emb]. When attn_out is given
  // the attention weights over T are reported there (diagnostics/tests).
  Tensor forward(const LayeredFeatures& lf, Tensor* attn_out = nullptr) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const;
};

}  // namespace moatts

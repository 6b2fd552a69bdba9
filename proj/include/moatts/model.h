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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moatts/moa.h"
#include "moatts/speaker_embed.h"

namespace moatts {

// Desk-scale size grid mirroring the full-scale S / M/S / M / L ordering.
// d_filter = pred_filter = 2 * d_model throughout the grid.
struct ModelConfig {
  std::string name = "S";
  size_t enc_layers = 2;
  size_t dec_layers = 3;
  size_t d_model = 32;
  size_t d_filter = 64;
  size_t pred_filter = 64;
  size_t n_heads = 2;
  size_t n_mels = 20;
  size_t vocab = 40;
  size_t ref_layers = 4;
  size_t ref_feat = 16;
  double dropout = 0.1;
  bool moa_enabled = false;
  MoAConfig moa;

  size_t d_emb() const { return d_model; }  // embedding matches decoder dim

  // size in {"S", "MS", "M", "L"}.
  static ModelConfig desk(const std::string& size);
  static ModelConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct MelSpectrogram {
  Tensor frames;  // [T, n_mels]
  static constexpr double kFrameShiftSec = 0.010;

  size_t length() const { return frames.extent(0); }
  double seconds() const { return static_cast<double>(length()) * kFrameShiftSec; }
};

struct GateRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::string site_id;
  int layer_index = -1;  // decoder block index, -1 for predictor sites
  std::vector<double> weights;
};
using GateTrace = std::vector<GateRecord>;

// Per-forward context: training flag, dropout RNG, gate reporting, and the
// per-site gate-weight tensors the importance loss needs.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  GateTrace* trace = nullptr;
  std::string utterance_id;
  std::string speaker_id;
  // Graph-connected post-routing gate weights, appended per site.
  std::map<std::string, std::vector<Tensor>>* gate_rows = nullptr;
};

struct MultiHeadAttention {
  size_t d_model = 0, n_heads = 0, d_head = 0;
  std::vector<LinearLayer> q, k, v;
  LinearLayer out;

  MultiHeadAttention() = default;
  MultiHeadAttention(size_t d_model, size_t n_heads, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const;
};

// Feed-forward Transformer block: self-attention and a position-wise
// feed-forward stack, each with residual + post-norm. Decoder blocks may
// carry a MoA module after the feed-forward sub-layer.
struct FftBlock {
  MultiHeadAttention attn;
  LayerNormLayer norm1;
  LinearLayer ff1, ff2;
  LayerNormLayer norm2;
  double dropout_p = 0.1;
  std::optional<MoAModule> moa;
  int layer_index = -1;

  FftBlock() = default;
  FftBlock(const ModelConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& x_e, ForwardContext& ctx) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const;
};

// Variance predictor: two conv1d(kernel 3) layers with layer-norm and
// dropout, an optional MoA module after the conv stack, then a linear
// readout to one value per position.
struct Predictor {
  Conv1dLayer conv1;
  LayerNormLayer norm1;
  Conv1dLayer conv2;
  LayerNormLayer norm2;
  LinearLayer out;
  double dropout_p = 0.1;
  std::optional<MoAModule> moa;

  Predictor() = default;
  Predictor(const std::string& site, const ModelConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& x_e, ForwardContext& ctx) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  size_t param_count() const;
};

struct VarianceTargets {
  std::vector<int> durations;
  Tensor pitch;   // [T]
  Tensor energy;  // [T]
};

struct VarianceOutput {
  Tensor dur_pred;           // [P], log domain
  Tensor pitch_pred;         // [T]
  Tensor energy_pred;        // [T]
  Tensor frames;             // [T, d_model] conditioned hidden states
  std::vector<int> durations_used;
};

struct SynthesisResult {
  MelSpectrogram mel;
  Tensor dur_pred;
  Tensor pitch_pred;
  Tensor energy_pred;
  std::vector<int> durations_used;
};

struct ParamCount {
  size_t total = 0;
  size_t backbone = 0;
  size_t moa_added = 0;
  std::vector<std::pair<std::string, size_t>> per_component;
};

class TtsModel {
 public:
  TtsModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  Tensor embed_reference(const LayeredFeatures& lf) const {
    return embedding.forward(lf);
  }

  // Phoneme ids -> [P, d_model]; speaker embedding added to the output.
  Tensor encode(const std::vector<int>& phonemes, const Tensor& x_e,
                ForwardContext& ctx) const;

  // Training mode requires targets (teacher forcing); inference derives
  // durations from the log-domain prediction and feeds predicted pitch and
  // energy back into the frames.
  VarianceOutput variance_adapter(const Tensor& h, const Tensor& x_e,
                                  const VarianceTargets* targets,
                                  ForwardContext& ctx) const;

  Tensor decode(const Tensor& frames, const Tensor& x_e,
                ForwardContext& ctx) const;  // [T, n_mels]

  // embed -> encode -> variance adapter -> length regulation -> decode.
  // gt_durations, when given, pins the frame alignment (metric protocol).
  SynthesisResult synthesize(const std::vector<int>& phonemes,
                             const LayeredFeatures& reference,
                             const std::vector<int>* gt_durations = nullptr,
                             ForwardContext* ctx = nullptr) const;

  // Same pipeline with a precomputed speaker embedding (cache-friendly).
  SynthesisResult synthesize_embedded(const std::vector<int>& phonemes,
                                      const Tensor& x_e,
                                      const std::vector<int>* gt_durations,
                                      ForwardContext* ctx) const;

  NamedParams parameters() const;
  ParamCount count_parameters() const;

  // Overwrite parameters from a checkpoint's arrays; throws IoError on any
  // name or shape mismatch.
  void load_parameters(const class TensorFile& ckpt);
  // Copy values for every identically-named parameter present in `donor`.
  void adopt_backbone(const TtsModel& donor);

  EmbeddingModule embedding;
  Tensor phoneme_table;  // [vocab, d_model]
  std::vector<FftBlock> encoder;
  std::vector<FftBlock> decoder;
  Predictor dur_pred;
  Predictor pitch_pred;
  Predictor energy_pred;
  LinearLayer pitch_emb;   // 1 -> d_model
  LinearLayer energy_emb;  // 1 -> d_model
  LinearLayer mel_out;     // d_model -> n_mels

 private:
  ModelConfig cfg_;
};

// Row p of h repeated durations[p] times (thin wrapper over repeat_rows,
// kept as the named length-regulator entry point).
Tensor length_regulate(const Tensor& h, const std::vector<int>& durations);

// Inference-time duration rounding: round(exp(pred) - 1), clamped at zero,
// with a floor guaranteeing at least one nonzero duration.
std::vector<int> durations_from_log_pred(const Tensor& dur_pred);

Tensor sinusoidal_positions(size_t len, size_t dim);

}  // namespace moatts

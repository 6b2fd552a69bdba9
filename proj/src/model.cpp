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

#include "moatts/model.h"

#include <algorithm>
#include <cmath>

#include "moatts/io.h"

namespace moatts {

// ---- config -------------------------------------------------------------

ModelConfig ModelConfig::desk(const std::string& size) {
  ModelConfig cfg;
  cfg.name = size;
  if (size == "S") {
    cfg.d_model = 32;
  } else if (size == "MS") {
    cfg.d_model = 40;
  } else if (size == "M") {
    cfg.d_model = 64;
  } else if (size == "L") {
    cfg.d_model = 128;
  } else {
    throw ConfigError("unknown desk size '" + size + "' (S, MS, M, L)");
  }
  cfg.d_filter = 2 * cfg.d_model;
  cfg.pred_filter = cfg.d_filter;
  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % n_heads != 0 || d_model % 2 != 0)
    throw ConfigError("d_model must be even and divisible by n_heads");
  if (enc_layers == 0 || dec_layers == 0 || n_mels == 0 || vocab == 0)
    throw ConfigError("layer counts, n_mels and vocab must be positive");
  if (moa_enabled) {
    if (moa.bottleneck >= d_model)
      throw ConfigError("moa bottleneck must be smaller than d_model");
    if (moa.mode == GateMode::kSparse &&
        (moa.top_k < 1 || moa.top_k > moa.n_adapters))
      throw ConfigError("moa top_k outside [1, N]");
    if (moa.sites != "decoder" && moa.sites != "predictors" &&
        moa.sites != "both")
      throw ConfigError("moa sites must be decoder, predictors or both");
  }
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j{{"name", name},
                   {"enc_layers", enc_layers},
                   {"dec_layers", dec_layers},
                   {"d_model", d_model},
                   {"d_filter", d_filter},
                   {"pred_filter", pred_filter},
                   {"n_heads", n_heads},
                   {"n_mels", n_mels},
                   {"vocab", vocab},
                   {"ref_layers", ref_layers},
                   {"ref_feat", ref_feat},
                   {"dropout", dropout}};
  if (moa_enabled) {
    j["moa"] = {{"n_adapters", moa.n_adapters},
                {"mode", moa.mode == GateMode::kSparse ? "sparse" : "dense"},
                {"top_k", moa.top_k},
                {"bottleneck", moa.bottleneck},
                {"sites", moa.sites}};
  }
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.name = j.value("name", cfg.name);
  cfg.enc_layers = j.value("enc_layers", cfg.enc_layers);
  cfg.dec_layers = j.value("dec_layers", cfg.dec_layers);
  cfg.d_model = j.value("d_model", cfg.d_model);
  cfg.d_filter = j.value("d_filter", 2 * cfg.d_model);
  cfg.pred_filter = j.value("pred_filter", cfg.d_filter);
  cfg.n_heads = j.value("n_heads", cfg.n_heads);
  cfg.n_mels = j.value("n_mels", cfg.n_mels);
  cfg.vocab = j.value("vocab", cfg.vocab);
  cfg.ref_layers = j.value("ref_layers", cfg.ref_layers);
  cfg.ref_feat = j.value("ref_feat", cfg.ref_feat);
  cfg.dropout = j.value("dropout", cfg.dropout);
  if (j.contains("moa")) {
    cfg.moa_enabled = true;
    const auto& m = j.at("moa");
    cfg.moa.n_adapters = m.value("n_adapters", cfg.moa.n_adapters);
    std::string mode = m.value("mode", "sparse");
    if (mode == "sparse") {
      cfg.moa.mode = GateMode::kSparse;
    } else if (mode == "dense") {
      cfg.moa.mode = GateMode::kDense;
    } else {
      throw ConfigError("moa mode must be 'sparse' or 'dense'");
    }
    cfg.moa.top_k = m.value("top_k", cfg.moa.top_k);
    cfg.moa.bottleneck = m.value("bottleneck", cfg.moa.bottleneck);
    cfg.moa.sites = m.value("sites", cfg.moa.sites);
  }
  cfg.validate();
  return cfg;
}

// ---- helpers ------------------------------------------------------------

Tensor sinusoidal_positions(size_t len, size_t dim) {
  Tensor pe({len, dim});
  for (size_t p = 0; p < len; ++p)
    for (size_t i = 0; i < dim / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                          static_cast<double>(dim));
      pe.data()[p * dim + 2 * i] = std::sin(static_cast<double>(p) * freq);
      pe.data()[p * dim + 2 * i + 1] = std::cos(static_cast<double>(p) * freq);
    }
  return pe;
}

Tensor length_regulate(const Tensor& h, const std::vector<int>& durations) {
  return repeat_rows(h, durations);
}

std::vector<int> durations_from_log_pred(const Tensor& dur_pred) {
  std::vector<int> out(dur_pred.size());
  for (size_t i = 0; i < dur_pred.size(); ++i) {
    double d = std::round(std::exp(dur_pred.data()[i]) - 1.0);
    out[i] = d > 0.0 ? static_cast<int>(d) : 0;
  }
  bool any = std::any_of(out.begin(), out.end(), [](int d) { return d > 0; });
  if (!any) {
    size_t best = 0;
    for (size_t i = 1; i < dur_pred.size(); ++i)
      if (dur_pred.data()[i] > dur_pred.data()[best]) best = i;
    out[best] = 1;
  }
  return out;
}

namespace {

Tensor maybe_dropout(const Tensor& x, double p, ForwardContext& ctx) {
  if (!ctx.training) return x;
  if (!ctx.rng)
    throw ContractError("training-mode forward requires a dropout RNG");
  return dropout(x, p, *ctx.rng, true);
}

void record_gate(const MoAModule& m, const GateResult& g, int layer_index,
                 ForwardContext& ctx) {
  if (ctx.trace)
    ctx.trace->push_back({ctx.utterance_id, ctx.speaker_id, m.site_id,
                          layer_index, g.weights.data()});
  if (ctx.gate_rows) (*ctx.gate_rows)[m.site_id].push_back(g.weights);
}

}  // namespace

// ---- attention ----------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(size_t d_model_, size_t n_heads_,
                                       Rng& rng)
    : d_model(d_model_), n_heads(n_heads_), d_head(d_model_ / n_heads_) {
  for (size_t h = 0; h < n_heads; ++h) {
    q.emplace_back(d_model, d_head, rng);
    k.emplace_back(d_model, d_head, rng);
    v.emplace_back(d_model, d_head, rng);
  }
  out = LinearLayer(d_model, d_model, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
  double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (size_t h = 0; h < n_heads; ++h) {
    Tensor qh = q[h].forward(x);
    Tensor kh = k[h].forward(x);
    Tensor vh = v[h].forward(x);
    Tensor attn = softmax_rows(mul_scalar(matmul_nt(qh, kh), scale));
    heads.push_back(matmul(attn, vh));
  }
  return out.forward(concat_cols(heads));
}

void MultiHeadAttention::collect(const std::string& prefix,
                                 NamedParams& out_params) const {
  for (size_t h = 0; h < n_heads; ++h) {
    std::string hp = prefix + ".head" + std::to_string(h);
    q[h].collect(hp + ".q", out_params);
    k[h].collect(hp + ".k", out_params);
    v[h].collect(hp + ".v", out_params);
  }
  out.collect(prefix + ".out", out_params);
}

size_t MultiHeadAttention::param_count() const {
  size_t total = out.param_count();
  for (size_t h = 0; h < n_heads; ++h)
    total += q[h].param_count() + k[h].param_count() + v[h].param_count();
  return total;
}

// ---- FFT block ----------------------------------------------------------

FftBlock::FftBlock(const ModelConfig& cfg, Rng& rng)
    : attn(cfg.d_model, cfg.n_heads, rng),
      norm1(cfg.d_model),
      ff1(cfg.d_model, cfg.d_filter, rng),
      ff2(cfg.d_filter, cfg.d_model, rng),
      norm2(cfg.d_model),
      dropout_p(cfg.dropout) {}

Tensor FftBlock::forward(const Tensor& x, const Tensor& x_e,
                         ForwardContext& ctx) const {
  Tensor a = maybe_dropout(attn.forward(x), dropout_p, ctx);
  Tensor h = norm1.forward(add(x, a));
  Tensor f = maybe_dropout(ff2.forward(relu(ff1.forward(h))), dropout_p, ctx);
  Tensor y = norm2.forward(add(h, f));
  if (moa) {
    GateResult g;
    y = moa->forward(y, x_e, &g);
    record_gate(*moa, g, layer_index, ctx);
  }
  return y;
}

void FftBlock::collect(const std::string& prefix, NamedParams& out) const {
  attn.collect(prefix + ".attn", out);
  norm1.collect(prefix + ".norm1", out);
  ff1.collect(prefix + ".ff1", out);
  ff2.collect(prefix + ".ff2", out);
  norm2.collect(prefix + ".norm2", out);
  if (moa) moa->collect(prefix + ".moa", out);
}

size_t FftBlock::param_count() const {
  size_t total = attn.param_count() + norm1.param_count() + ff1.param_count() +
                 ff2.param_count() + norm2.param_count();
  if (moa) total += moa->param_count();
  return total;
}

// ---- predictors ---------------------------------------------------------

Predictor::Predictor(const std::string& site, const ModelConfig& cfg, Rng& rng)
    : conv1(3, cfg.d_model, cfg.pred_filter, rng),
      norm1(cfg.pred_filter),
      conv2(3, cfg.pred_filter, cfg.d_model, rng),
      norm2(cfg.d_model),
      out(cfg.d_model, 1, rng),
      dropout_p(cfg.dropout) {
  if (cfg.moa_enabled &&
      (cfg.moa.sites == "predictors" || cfg.moa.sites == "both"))
    moa.emplace(site, cfg.d_model, cfg.d_emb(), cfg.moa, rng);
}

Tensor Predictor::forward(const Tensor& x, const Tensor& x_e,
                          ForwardContext& ctx) const {
  Tensor h = maybe_dropout(norm1.forward(relu(conv1.forward(x))), dropout_p, ctx);
  h = maybe_dropout(norm2.forward(relu(conv2.forward(h))), dropout_p, ctx);
  if (moa) {
    GateResult g;
    h = moa->forward(h, x_e, &g);
    record_gate(*moa, g, -1, ctx);
  }
  return reshape(out.forward(h), {x.extent(0)});
}

void Predictor::collect(const std::string& prefix, NamedParams& out_params) const {
  conv1.collect(prefix + ".conv1", out_params);
  norm1.collect(prefix + ".norm1", out_params);
  conv2.collect(prefix + ".conv2", out_params);
  norm2.collect(prefix + ".norm2", out_params);
  if (moa) moa->collect(prefix + ".moa", out_params);
  out.collect(prefix + ".out", out_params);
}

size_t Predictor::param_count() const {
  size_t total = conv1.param_count() + norm1.param_count() +
                 conv2.param_count() + norm2.param_count() + out.param_count();
  if (moa) total += moa->param_count();
  return total;
}

// ---- model --------------------------------------------------------------

TtsModel::TtsModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, hash_string("tts-model")));
  embedding = EmbeddingModule(cfg.ref_layers, cfg.ref_feat, cfg.d_emb(), rng);
  phoneme_table = init_uniform({cfg.vocab, cfg.d_model}, cfg.d_model, rng);
  for (size_t i = 0; i < cfg.enc_layers; ++i) {
    encoder.emplace_back(cfg_, rng);
    encoder.back().layer_index = static_cast<int>(i);
  }
  bool moa_in_decoder =
      cfg.moa_enabled && (cfg.moa.sites == "decoder" || cfg.moa.sites == "both");
  for (size_t i = 0; i < cfg.dec_layers; ++i) {
    decoder.emplace_back(cfg_, rng);
    decoder.back().layer_index = static_cast<int>(i);
    if (moa_in_decoder)
      decoder.back().moa.emplace("decoder_block_" + std::to_string(i),
                                 cfg.d_model, cfg.d_emb(), cfg.moa, rng);
  }
  dur_pred = Predictor("dur_predictor", cfg_, rng);
  pitch_pred = Predictor("pitch_predictor", cfg_, rng);
  energy_pred = Predictor("energy_predictor", cfg_, rng);
  pitch_emb = LinearLayer(1, cfg.d_model, rng);
  energy_emb = LinearLayer(1, cfg.d_model, rng);
  mel_out = LinearLayer(cfg.d_model, cfg.n_mels, rng);
}

Tensor TtsModel::encode(const std::vector<int>& phonemes, const Tensor& x_e,
                        ForwardContext& ctx) const {
  if (phonemes.empty()) throw ContractError("encode: empty phoneme sequence");
  Tensor h = embedding_rows(phoneme_table, phonemes);
  h = add(h, sinusoidal_positions(phonemes.size(), cfg_.d_model));
  for (const auto& block : encoder) h = block.forward(h, x_e, ctx);
  return add_row(h, x_e);
}

VarianceOutput TtsModel::variance_adapter(const Tensor& h, const Tensor& x_e,
                                          const VarianceTargets* targets,
                                          ForwardContext& ctx) const {
  if (ctx.training && !targets)
    throw ContractError("variance_adapter: training mode requires targets");
  VarianceOutput out;
  out.dur_pred = dur_pred.forward(h, x_e, ctx);  // [P], log domain

  if (targets) {
    if (targets->durations.size() != h.extent(0))
      throw DimensionError("variance_adapter: " +
                           std::to_string(targets->durations.size()) +
                           " target durations for " +
                           std::to_string(h.extent(0)) + " phonemes");
    out.durations_used = targets->durations;
  } else {
    out.durations_used = durations_from_log_pred(out.dur_pred);
  }

  Tensor frames = length_regulate(h, out.durations_used);
  size_t t = frames.extent(0);

  out.pitch_pred = pitch_pred.forward(frames, x_e, ctx);
  Tensor pitch_values = targets ? targets->pitch : out.pitch_pred;
  if (pitch_values.size() != t)
    throw DimensionError("variance_adapter: pitch length " +
                         std::to_string(pitch_values.size()) + " vs T=" +
                         std::to_string(t));
  frames = add(frames, pitch_emb.forward(reshape(pitch_values, {t, 1})));

  out.energy_pred = energy_pred.forward(frames, x_e, ctx);
  Tensor energy_values = targets ? targets->energy : out.energy_pred;
  if (energy_values.size() != t)
    throw DimensionError("variance_adapter: energy length mismatch");
  frames = add(frames, energy_emb.forward(reshape(energy_values, {t, 1})));

  out.frames = frames;
  return out;
}

Tensor TtsModel::decode(const Tensor& frames, const Tensor& x_e,
                        ForwardContext& ctx) const {
  if (frames.extent(0) == 0) throw ContractError("decode: empty frame sequence");
  Tensor h = add(frames, sinusoidal_positions(frames.extent(0), cfg_.d_model));
  for (const auto& block : decoder) h = block.forward(h, x_e, ctx);
  return mel_out.forward(h);
}

SynthesisResult TtsModel::synthesize(const std::vector<int>& phonemes,
                                     const LayeredFeatures& reference,
                                     const std::vector<int>* gt_durations,
                                     ForwardContext* ctx) const {
  return synthesize_embedded(phonemes, embed_reference(reference),
                             gt_durations, ctx);
}

SynthesisResult TtsModel::synthesize_embedded(
    const std::vector<int>& phonemes, const Tensor& x_e,
    const std::vector<int>* gt_durations, ForwardContext* ctx) const {
  ForwardContext local;
  ForwardContext& c = ctx ? *ctx : local;
  Tensor h = encode(phonemes, x_e, c);

  VarianceOutput vo;
  if (gt_durations) {
    // Ground-truth alignment: durations pinned, pitch/energy still predicted.
    if (gt_durations->size() != phonemes.size())
      throw DimensionError("synthesize: duration count mismatch");
    vo.dur_pred = dur_pred.forward(h, x_e, c);
    vo.durations_used = *gt_durations;
    Tensor frames = length_regulate(h, vo.durations_used);
    size_t t = frames.extent(0);
    vo.pitch_pred = pitch_pred.forward(frames, x_e, c);
    frames = add(frames, pitch_emb.forward(reshape(vo.pitch_pred, {t, 1})));
    vo.energy_pred = energy_pred.forward(frames, x_e, c);
    frames = add(frames, energy_emb.forward(reshape(vo.energy_pred, {t, 1})));
    vo.frames = frames;
  } else {
    vo = variance_adapter(h, x_e, nullptr, c);
  }

  SynthesisResult result;
  result.mel.frames = decode(vo.frames, x_e, c);
  result.dur_pred = vo.dur_pred;
  result.pitch_pred = vo.pitch_pred;
  result.energy_pred = vo.energy_pred;
  result.durations_used = vo.durations_used;
  return result;
}

NamedParams TtsModel::parameters() const {
  NamedParams params;
  embedding.collect("embedding", params);
  params.emplace_back("phoneme_table", phoneme_table);
  for (size_t i = 0; i < encoder.size(); ++i)
    encoder[i].collect("encoder.block" + std::to_string(i), params);
  for (size_t i = 0; i < decoder.size(); ++i)
    decoder[i].collect("decoder.block" + std::to_string(i), params);
  dur_pred.collect("dur_pred", params);
  pitch_pred.collect("pitch_pred", params);
  energy_pred.collect("energy_pred", params);
  pitch_emb.collect("pitch_emb", params);
  energy_emb.collect("energy_emb", params);
  mel_out.collect("mel_out", params);
  return params;
}

ParamCount TtsModel::count_parameters() const {
  ParamCount pc;
  std::map<std::string, size_t> by_component;
  for (const auto& [name, tensor] : parameters()) {
    std::string component = name.substr(0, name.find('.'));
    by_component[component] += tensor.size();
    pc.total += tensor.size();
    if (name.find(".moa.") != std::string::npos)
      pc.moa_added += tensor.size();
  }
  pc.backbone = pc.total - pc.moa_added;
  pc.per_component.assign(by_component.begin(), by_component.end());
  return pc;
}

void TtsModel::load_parameters(const TensorFile& ckpt) {
  for (auto& [name, tensor] : parameters()) {
    if (!ckpt.has(name))
      throw IoError("checkpoint is missing parameter '" + name + "'");
    const NamedArray& a = ckpt.get(name);
    if (a.shape != tensor.shape())
      throw IoError("checkpoint shape mismatch for '" + name + "': " +
                    shape_str(a.shape) + " vs " + shape_str(tensor.shape()));
    tensor.data() = a.data;
  }
}

void TtsModel::adopt_backbone(const TtsModel& donor) {
  std::map<std::string, Tensor> donor_params;
  for (auto& [name, tensor] : donor.parameters()) donor_params.emplace(name, tensor);
  for (auto& [name, tensor] : parameters()) {
    auto it = donor_params.find(name);
    if (it == donor_params.end()) continue;
    if (it->second.shape() != tensor.shape())
      throw ContractError("adopt_backbone: shape mismatch for '" + name + "'");
    tensor.data() = it->second.data();
  }
}

}  // namespace moatts

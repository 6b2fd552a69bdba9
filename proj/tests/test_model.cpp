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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "moatts/io.h"
#include "moatts/model.h"

using namespace moatts;

namespace {

LayeredFeatures rand_reference(const ModelConfig& cfg, size_t t, Rng& rng) {
  LayeredFeatures lf;
  lf.features = Tensor({cfg.ref_layers, t, cfg.ref_feat});
  for (auto& v : lf.features.data()) v = rng.normal();
  return lf;
}

std::vector<int> rand_phonemes(const ModelConfig& cfg, size_t p, Rng& rng) {
  std::vector<int> ids(p);
  for (auto& id : ids) id = static_cast<int>(rng.below(cfg.vocab));
  return ids;
}

ModelConfig tiny_config(bool moa, GateMode mode = GateMode::kSparse) {
  ModelConfig cfg = ModelConfig::desk("S");
  cfg.moa_enabled = moa;
  cfg.moa.mode = mode;
  return cfg;
}

double l2_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("desk size grid is monotone in parameters") {
  size_t prev = 0;
  for (const char* size : {"S", "MS", "M", "L"}) {
    ModelConfig cfg = ModelConfig::desk(size);
    CHECK(cfg.d_filter == 2 * cfg.d_model);
    TtsModel model(cfg, 1);
    size_t total = model.count_parameters().total;
    CHECK(total > prev);
    prev = total;
  }
  CHECK_THROWS_AS(ModelConfig::desk("XL"), ConfigError);
}

TEST_CASE("config json round-trip") {
  ModelConfig cfg = ModelConfig::desk("MS");
  cfg.moa_enabled = true;
  cfg.moa.n_adapters = 6;
  cfg.moa.top_k = 2;
  cfg.moa.bottleneck = 3;
  cfg.moa.sites = "decoder";
  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.d_model == 40);
  CHECK(back.moa_enabled);
  CHECK(back.moa.n_adapters == 6);
  CHECK(back.moa.top_k == 2);
  CHECK(back.moa.sites == "decoder");
  CHECK(back.to_json() == cfg.to_json());

  nlohmann::json bad = cfg.to_json();
  bad["moa"]["mode"] = "noisy";
  CHECK_THROWS_AS(ModelConfig::from_json(bad), ConfigError);
}

TEST_CASE("length regulation") {
  Rng rng(30);
  Tensor h({3, 2});
  h.data() = {1, 2, 3, 4, 5, 6};
  SUBCASE("all ones is the identity") {
    Tensor out = length_regulate(h, {1, 1, 1});
    for (size_t i = 0; i < 6; ++i) CHECK(out.data()[i] == h.data()[i]);
  }
  SUBCASE("[2,1,3] expands to [a,a,b,c,c,c]") {
    Tensor out = length_regulate(h, {2, 1, 3});
    REQUIRE(out.shape() == std::vector<size_t>{6, 2});
    std::vector<double> expect{1, 2, 1, 2, 3, 4, 5, 6, 5, 6, 5, 6};
    for (size_t i = 0; i < 12; ++i) CHECK(out.data()[i] == expect[i]);
  }
  SUBCASE("zero durations drop rows") {
    Tensor out = length_regulate(h, {1, 0, 2});
    REQUIRE(out.shape() == std::vector<size_t>{3, 2});
    std::vector<double> expect{1, 2, 5, 6, 5, 6};
    for (size_t i = 0; i < 6; ++i) CHECK(out.data()[i] == expect[i]);
  }
  SUBCASE("all-zero durations raise") {
    CHECK_THROWS_AS(length_regulate(h, {0, 0, 0}), ContractError);
  }
}

TEST_CASE("duration rounding from log-domain predictions") {
  // round(exp(p) - 1) clamped at zero.
  Tensor p = Tensor::vector({std::log(3.0), std::log(1.2), -2.0});
  CHECK(durations_from_log_pred(p) == std::vector<int>{2, 0, 0});
  // All-zero rounding floors the argmax at one frame.
  Tensor q = Tensor::vector({-3.0, -1.0, -2.0});
  CHECK(durations_from_log_pred(q) == std::vector<int>{0, 1, 0});
}

TEST_CASE("encode shape, determinism and position sensitivity") {
  Rng rng(31);
  ModelConfig cfg = tiny_config(false);
  TtsModel model(cfg, 7);
  Tensor x_e = Tensor::zeros({cfg.d_emb()});
  for (auto& v : x_e.data()) v = rng.normal();
  ForwardContext ctx;

  SUBCASE("P=1") {
    Tensor h = model.encode({3}, x_e, ctx);
    CHECK(h.shape() == std::vector<size_t>{1, cfg.d_model});
  }
  SUBCASE("deterministic inference") {
    std::vector<int> ids = rand_phonemes(cfg, 6, rng);
    Tensor h1 = model.encode(ids, x_e, ctx);
    Tensor h2 = model.encode(ids, x_e, ctx);
    for (size_t i = 0; i < h1.size(); ++i) CHECK(h1.data()[i] == h2.data()[i]);
  }
  SUBCASE("permuting phonemes changes the output") {
    std::vector<int> ids{1, 2, 3, 4, 5};
    std::vector<int> perm{5, 4, 3, 2, 1};
    Tensor a = model.encode(ids, x_e, ctx);
    Tensor b = model.encode(perm, x_e, ctx);
    CHECK(l2_diff(a, b) > 1e-6);
  }
  SUBCASE("out-of-vocabulary id raises") {
    CHECK_THROWS_AS(model.encode({static_cast<int>(cfg.vocab)}, x_e, ctx),
                    ContractError);
  }
}

TEST_CASE("variance adapter shapes and teacher forcing") {
  Rng rng(32);
  ModelConfig cfg = tiny_config(false);
  TtsModel model(cfg, 8);
  Tensor x_e = Tensor::zeros({cfg.d_emb()});
  ForwardContext ctx;
  std::vector<int> ids = rand_phonemes(cfg, 3, rng);
  Tensor h = model.encode(ids, x_e, ctx);

  VarianceTargets targets;
  targets.durations = {2, 1, 3};
  targets.pitch = Tensor::zeros({6});
  targets.energy = Tensor::zeros({6});
  for (auto& v : targets.pitch.data()) v = rng.normal();
  for (auto& v : targets.energy.data()) v = rng.normal();

  VarianceOutput out = model.variance_adapter(h, x_e, &targets, ctx);
  CHECK(out.dur_pred.shape() == std::vector<size_t>{3});
  CHECK(out.pitch_pred.shape() == std::vector<size_t>{6});
  CHECK(out.energy_pred.shape() == std::vector<size_t>{6});
  CHECK(out.frames.shape() == std::vector<size_t>{6, cfg.d_model});

  ForwardContext train_ctx;
  train_ctx.training = true;
  Rng drop_rng(1);
  train_ctx.rng = &drop_rng;
  CHECK_THROWS_AS(model.variance_adapter(h, x_e, nullptr, train_ctx),
                  ContractError);
}

TEST_CASE("decode shape and synthesize contracts") {
  Rng rng(33);
  ModelConfig cfg = tiny_config(false);
  TtsModel model(cfg, 9);
  LayeredFeatures ref = rand_reference(cfg, 12, rng);
  std::vector<int> ids = rand_phonemes(cfg, 5, rng);

  SUBCASE("ground-truth durations pin T exactly") {
    std::vector<int> durs{1, 2, 1, 3, 2};
    SynthesisResult r = model.synthesize(ids, ref, &durs);
    CHECK(r.mel.frames.shape() == std::vector<size_t>{9, cfg.n_mels});
    CHECK(r.durations_used == durs);
  }
  SUBCASE("inference is deterministic") {
    SynthesisResult a = model.synthesize(ids, ref);
    SynthesisResult b = model.synthesize(ids, ref);
    REQUIRE(a.mel.frames.shape() == b.mel.frames.shape());
    for (size_t i = 0; i < a.mel.frames.size(); ++i)
      CHECK(a.mel.frames.data()[i] == b.mel.frames.data()[i]);
  }
  SUBCASE("free-running inference yields at least one frame") {
    SynthesisResult r = model.synthesize(ids, ref);
    CHECK(r.mel.length() >= 1);
  }
}

TEST_CASE("identity at insertion: MoA model equals backbone bit-exactly") {
  Rng rng(34);
  ModelConfig base = tiny_config(false);
  for (GateMode mode : {GateMode::kSparse, GateMode::kDense}) {
    ModelConfig with = tiny_config(true, mode);
    TtsModel backbone(base, 11);
    TtsModel moa_model(with, 12);
    moa_model.adopt_backbone(backbone);

    LayeredFeatures ref = rand_reference(base, 8, rng);
    std::vector<int> ids = rand_phonemes(base, 4, rng);
    std::vector<int> durs{2, 1, 2, 1};
    SynthesisResult a = backbone.synthesize(ids, ref, &durs);
    SynthesisResult b = moa_model.synthesize(ids, ref, &durs);
    REQUIRE(a.mel.frames.size() == b.mel.frames.size());
    for (size_t i = 0; i < a.mel.frames.size(); ++i)
      CHECK(a.mel.frames.data()[i] == b.mel.frames.data()[i]);
  }
}

TEST_CASE("parameter accounting") {
  ModelConfig base = tiny_config(false);
  ModelConfig with = tiny_config(true);
  TtsModel backbone(base, 13);
  TtsModel moa_model(with, 13);

  ParamCount pb = backbone.count_parameters();
  ParamCount pm = moa_model.count_parameters();
  CHECK(pb.moa_added == 0);
  CHECK(pb.total == pb.backbone);
  CHECK(pm.backbone == pb.total);
  CHECK(pm.moa_added > 0);
  CHECK(pm.total == pm.backbone + pm.moa_added);

  // moa_added closed form: per site N adapters (norm 2D + down D*B+B +
  // up B*D+D) plus the gate projection (d_emb*N + N).
  size_t d = with.d_model, b = with.moa.bottleneck, n = with.moa.n_adapters;
  size_t per_adapter = 2 * d + (d * b + b) + (b * d + d);
  size_t per_site = n * per_adapter + (with.d_emb() * n + n);
  size_t sites = with.dec_layers + 3;  // decoder blocks + three predictors
  CHECK(pm.moa_added == sites * per_site);

  // Named parameters and component counts agree.
  size_t named_total = 0;
  for (auto& [name, t] : moa_model.parameters()) named_total += t.size();
  CHECK(named_total == pm.total);
}

TEST_CASE("checkpoint round-trip restores the exact model") {
  Rng rng(35);
  ModelConfig cfg = tiny_config(true);
  TtsModel model(cfg, 14);

  std::vector<NamedArray> arrays;
  for (auto& [name, t] : model.parameters())
    arrays.push_back({name, t.shape(), t.data()});
  std::string path = (std::filesystem::temp_directory_path() /
                      "moatts_model_ckpt_test.bin")
                         .string();
  write_tensor_file(path, {{"config", cfg.to_json()}}, arrays);

  TtsModel other(cfg, 999);
  other.load_parameters(read_tensor_file(path));

  LayeredFeatures ref = rand_reference(cfg, 6, rng);
  std::vector<int> ids = rand_phonemes(cfg, 3, rng);
  SynthesisResult a = model.synthesize(ids, ref);
  SynthesisResult b = other.synthesize(ids, ref);
  REQUIRE(a.mel.frames.size() == b.mel.frames.size());
  for (size_t i = 0; i < a.mel.frames.size(); ++i)
    CHECK(a.mel.frames.data()[i] == b.mel.frames.data()[i]);
  std::remove(path.c_str());
}

TEST_CASE("gate traces are recorded at every MoA site") {
  Rng rng(36);
  ModelConfig cfg = tiny_config(true);
  TtsModel model(cfg, 15);
  LayeredFeatures ref = rand_reference(cfg, 6, rng);
  std::vector<int> ids = rand_phonemes(cfg, 4, rng);

  GateTrace trace;
  ForwardContext ctx;
  ctx.trace = &trace;
  ctx.utterance_id = "utt-1";
  ctx.speaker_id = "spk-1";
  model.synthesize(ids, ref, nullptr, &ctx);

  std::vector<std::string> seen;
  for (const auto& rec : trace) {
    seen.push_back(rec.site_id);
    CHECK(rec.weights.size() == cfg.moa.n_adapters);
    double sum = 0.0;
    for (double w : rec.weights) sum += w;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
  for (const char* site :
       {"decoder_block_0", "decoder_block_1", "decoder_block_2",
        "dur_predictor", "pitch_predictor", "energy_predictor"}) {
    CHECK(std::count(seen.begin(), seen.end(), site) == 1);
  }
}

TEST_CASE("end-to-end gradient through the full model loss") {
  Rng rng(37);
  ModelConfig cfg = ModelConfig::desk("S");
  cfg.moa_enabled = true;
  cfg.dropout = 0.0;  // finite differences need a deterministic forward
  TtsModel model(cfg, 16);

  LayeredFeatures ref = rand_reference(cfg, 5, rng);
  std::vector<int> ids = rand_phonemes(cfg, 3, rng);
  VarianceTargets targets;
  targets.durations = {1, 2, 1};
  targets.pitch = Tensor::zeros({4});
  targets.energy = Tensor::zeros({4});
  Tensor mel_target({4, cfg.n_mels});
  for (auto& v : targets.pitch.data()) v = rng.normal();
  for (auto& v : targets.energy.data()) v = rng.normal();
  for (auto& v : mel_target.data()) v = rng.normal();

  auto loss_fn = [&]() {
    ForwardContext ctx;
    ctx.training = true;
    Rng drop(1);
    ctx.rng = &drop;
    Tensor x_e = model.embed_reference(ref);
    Tensor h = model.encode(ids, x_e, ctx);
    VarianceOutput vo = model.variance_adapter(h, x_e, &targets, ctx);
    Tensor mel = model.decode(vo.frames, x_e, ctx);
    return add(mse(mel, mel_target),
               add(mse(vo.pitch_pred, targets.pitch),
                   mse(vo.energy_pred, targets.energy)));
  };

  // Spot-check a handful of parameters spanning components.
  NamedParams params = model.parameters();
  std::vector<std::string> picks{
      "embedding.layer_logits", "phoneme_table",
      "encoder.block0.ff1.b",   "decoder.block2.moa.adapter0.down.w",
      "decoder.block1.moa.gate.proj.w", "pitch_pred.conv1.b", "mel_out.b"};
  for (const auto& pick : picks) {
    Tensor target;
    for (auto& [name, t] : params)
      if (name == pick) target = t;
    REQUIRE(target.size() > 0);
    // Nudge the up-projections off zero so adapter paths carry gradient,
    // and the gate projections off the top-k tie boundary so the survivor
    // set is stable under the finite-difference step.
    if (pick.find(".moa.") != std::string::npos)
      for (auto& [name, t] : params) {
        if (name.find(".up.") != std::string::npos)
          for (auto& v : t.data()) v = rng.normal(0.0, 0.1);
        if (name.find(".gate.proj.") != std::string::npos)
          for (auto& v : t.data()) v = rng.normal(0.0, 0.5);
      }
    target.set_requires_grad(true);
    auto f = [&](Tensor&) { return loss_fn(); };
    auto report = finite_diff_check(f, target);
    CHECK_MESSAGE(report.pass, pick, " max_rel_err=", report.max_rel_err);
    target.set_requires_grad(false);
  }
}

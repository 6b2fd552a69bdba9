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

#include "moatts/train.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "moatts/io.h"

namespace moatts {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (phase1_steps == 0 || phase2_steps == 0 || batch_size == 0 ||
      warmup_steps == 0 || checkpoint_every == 0)
    throw ConfigError("train config counts must be positive");
  if (lambda_importance < 0.0)
    throw ConfigError("lambda_importance must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"phase1_steps", phase1_steps},
          {"phase2_steps", phase2_steps},
          {"batch_size", batch_size},
          {"warmup_steps", warmup_steps},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"lambda_importance", lambda_importance},
          {"grad_clip", grad_clip},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.phase1_steps = j.value("phase1_steps", cfg.phase1_steps);
  cfg.phase2_steps = j.value("phase2_steps", cfg.phase2_steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  cfg.lambda_importance = j.value("lambda_importance", cfg.lambda_importance);
  cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.validate();
  return cfg;
}

double noam_lr(size_t step, size_t d_model, size_t warmup) {
  if (step == 0) throw ContractError("noam_lr: step counts from 1");
  if (d_model == 0 || warmup == 0)
    throw ContractError("noam_lr: d_model and warmup must be positive");
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

AdamOptimizer::AdamOptimizer(NamedParams params, const TrainConfig& cfg)
    : params_(std::move(params)),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      clip_(cfg.grad_clip) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    params_[i].second.set_requires_grad(true);
    m_[i].assign(params_[i].second.size(), 0.0);
    v_[i].assign(params_[i].second.size(), 0.0);
  }
}

double AdamOptimizer::step(double lr) {
  double norm_sq = 0.0;
  for (auto& [name, p] : params_)
    for (double g : p.grad()) norm_sq += g * g;
  double norm = std::sqrt(norm_sq);
  double scale = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;

  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& data = params_[i].second.data();
    auto& grad = params_[i].second.grad();
    for (size_t j = 0; j < data.size(); ++j) {
      double g = grad[j] * scale;
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      data[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
    }
    params_[i].second.zero_grad();
  }
  return norm;
}

StepLosses batch_loss(const TtsModel& model,
                      const std::vector<const Utterance*>& batch,
                      double lambda_importance, Rng* dropout_rng, Graph* graph,
                      Tensor* loss_out) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  std::optional<GraphScope> scope;
  if (graph) scope.emplace(*graph);

  std::map<std::string, std::vector<Tensor>> gate_rows;
  Tensor mel_loss, dur_loss, pitch_loss, energy_loss;
  bool first = true;
  for (const Utterance* u : batch) {
    ForwardContext ctx;
    ctx.training = dropout_rng != nullptr;
    ctx.rng = dropout_rng;
    ctx.utterance_id = u->utterance_id;
    ctx.speaker_id = u->speaker_id;
    ctx.gate_rows = &gate_rows;

    Tensor x_e = model.embed_reference(u->ref_features);
    Tensor h = model.encode(u->phonemes, x_e, ctx);
    VarianceTargets targets;
    targets.durations = u->durations;
    targets.pitch = u->pitch;
    targets.energy = u->energy;
    VarianceOutput vo = model.variance_adapter(h, x_e, &targets, ctx);
    Tensor mel = model.decode(vo.frames, x_e, ctx);

    Tensor log_dur({u->durations.size()});
    for (size_t i = 0; i < u->durations.size(); ++i)
      log_dur.data()[i] = std::log(static_cast<double>(u->durations[i]) + 1.0);

    Tensor lm = mse(mel, u->mel.frames);
    Tensor ld = mse(vo.dur_pred, log_dur);
    Tensor lp = mse(vo.pitch_pred, u->pitch);
    Tensor le = mse(vo.energy_pred, u->energy);
    if (first) {
      mel_loss = lm;
      dur_loss = ld;
      pitch_loss = lp;
      energy_loss = le;
      first = false;
    } else {
      mel_loss = add(mel_loss, lm);
      dur_loss = add(dur_loss, ld);
      pitch_loss = add(pitch_loss, lp);
      energy_loss = add(energy_loss, le);
    }
  }
  double inv_b = 1.0 / static_cast<double>(batch.size());
  mel_loss = mul_scalar(mel_loss, inv_b);
  dur_loss = mul_scalar(dur_loss, inv_b);
  pitch_loss = mul_scalar(pitch_loss, inv_b);
  energy_loss = mul_scalar(energy_loss, inv_b);

  Tensor imp_loss;
  if (!gate_rows.empty()) {
    bool first_site = true;
    for (auto& [site, rows] : gate_rows) {
      Tensor site_loss = importance_loss(stack_rows(rows));
      imp_loss = first_site ? site_loss : add(imp_loss, site_loss);
      first_site = false;
    }
    imp_loss =
        mul_scalar(imp_loss, 1.0 / static_cast<double>(gate_rows.size()));
  } else {
    imp_loss = Tensor::scalar(0.0);
  }

  Tensor total =
      add(add(add(mel_loss, dur_loss), add(pitch_loss, energy_loss)),
          mul_scalar(imp_loss, lambda_importance));

  StepLosses l;
  l.mel = mel_loss.item();
  l.dur = dur_loss.item();
  l.pitch = pitch_loss.item();
  l.energy = energy_loss.item();
  l.importance = imp_loss.item();
  l.total = total.item();
  if (loss_out) *loss_out = total;
  return l;
}

StepLosses train_step(TtsModel& model,
                      const std::vector<const Utterance*>& batch,
                      AdamOptimizer& opt, const TrainConfig& cfg, size_t step,
                      Rng& dropout_rng) {
  Graph graph;
  Tensor loss;
  StepLosses l = batch_loss(model, batch, cfg.lambda_importance, &dropout_rng,
                            &graph, &loss);
  const std::pair<const char*, double> components[] = {
      {"mel", l.mel},       {"duration", l.dur},
      {"pitch", l.pitch},   {"energy", l.energy},
      {"importance", l.importance}, {"total", l.total}};
  for (const auto& [name, value] : components)
    if (!std::isfinite(value))
      throw ContractError("train_step: non-finite " + std::string(name) +
                          " loss at step " + std::to_string(step));
  graph.backward_from(loss);
  opt.step(noam_lr(step, model.config().d_model, cfg.warmup_steps));
  return l;
}

StepLosses validation_loss(const TtsModel& model,
                           const std::vector<const Utterance*>& batch,
                           double lambda_importance) {
  return batch_loss(model, batch, lambda_importance, nullptr, nullptr,
                    nullptr);
}

void save_checkpoint(const std::string& path, const TtsModel& model,
                     const nlohmann::json& extra_meta) {
  std::vector<NamedArray> arrays;
  for (auto& [name, t] : model.parameters())
    arrays.push_back({name, t.shape(), t.data()});
  nlohmann::json meta = extra_meta;
  meta["kind"] = "checkpoint";
  meta["model_config"] = model.config().to_json();
  write_tensor_file(path, meta, arrays);
}

nlohmann::json load_checkpoint(const std::string& path, TtsModel& model) {
  TensorFile f = read_tensor_file(path);
  if (f.meta.value("kind", "") != "checkpoint")
    throw IoError("'" + path + "' is not a checkpoint");
  ModelConfig stored = ModelConfig::from_json(f.meta.at("model_config"));
  if (stored.to_json() != model.config().to_json())
    throw IoError("checkpoint config mismatch for '" + path + "'");
  model.load_parameters(f);
  return f.meta;
}

namespace {

void log_row(std::ofstream& csv, size_t step, int phase, double lr,
             const StepLosses& l) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%zu,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step,
                phase, lr, l.total, l.mel, l.dur, l.pitch, l.energy,
                l.importance);
  csv << buf;
}

}  // namespace

TrainResult train_two_phase(const ModelConfig& mcfg, const TrainConfig& tcfg,
                            const Corpus& corpus, const std::string& out_dir) {
  mcfg.validate();
  tcfg.validate();
  std::vector<CorpusEntry> train_entries = corpus.split("train");
  if (train_entries.empty())
    throw ContractError("train_two_phase: corpus has no training split");
  fs::create_directories(out_dir);

  std::vector<Utterance> pool;
  pool.reserve(train_entries.size());
  for (const auto& e : train_entries)
    pool.push_back(load_utterance(corpus.dir, e));

  ModelConfig backbone_cfg = mcfg;
  backbone_cfg.moa_enabled = false;
  TtsModel backbone(backbone_cfg,
                    mix_seed(tcfg.seed, hash_string("backbone-init")));

  Rng batch_rng(mix_seed(tcfg.seed, hash_string("batches")));
  Rng dropout_rng(mix_seed(tcfg.seed, hash_string("dropout")));

  // Fixed probe batch for the phase-boundary loss comparison.
  std::vector<const Utterance*> probe;
  for (size_t i = 0; i < std::min(tcfg.batch_size, pool.size()); ++i)
    probe.push_back(&pool[i]);

  auto sample_batch = [&] {
    std::vector<const Utterance*> batch;
    for (size_t i = 0; i < tcfg.batch_size; ++i)
      batch.push_back(&pool[batch_rng.below(pool.size())]);
    return batch;
  };

  TrainResult result;
  result.metrics_csv = (fs::path(out_dir) / "metrics.csv").string();
  std::ofstream csv(result.metrics_csv, std::ios::trunc);
  csv << "# model_config: " << mcfg.to_json().dump() << "\n";
  csv << "# train_config: " << tcfg.to_json().dump() << "\n";
  csv << "# corpus_seed: " << corpus.seed << "\n";
  csv << "step,phase,lr,loss_total,loss_mel,loss_dur,loss_pitch,loss_energy,"
         "loss_importance\n";

  AdamOptimizer opt1(backbone.parameters(), tcfg);
  for (size_t step = 1; step <= tcfg.phase1_steps; ++step) {
    StepLosses l =
        train_step(backbone, sample_batch(), opt1, tcfg, step, dropout_rng);
    log_row(csv, step, 1, noam_lr(step, mcfg.d_model, tcfg.warmup_steps), l);
    result.history.push_back(l);
    if (step % tcfg.checkpoint_every == 0)
      save_checkpoint((fs::path(out_dir) / "latest.ckpt").string(), backbone,
                      {{"step", step}, {"phase", 1},
                       {"train_config", tcfg.to_json()}});
  }
  result.backbone_ckpt = (fs::path(out_dir) / "backbone.ckpt").string();
  save_checkpoint(result.backbone_ckpt, backbone,
                  {{"step", tcfg.phase1_steps}, {"phase", 1},
                   {"train_config", tcfg.to_json()}});
  result.phase1_final_val =
      validation_loss(backbone, probe, tcfg.lambda_importance);

  std::optional<TtsModel> moa_model;
  TtsModel* current = &backbone;
  std::optional<AdamOptimizer> opt2;
  AdamOptimizer* opt = &opt1;
  if (mcfg.moa_enabled) {
    moa_model.emplace(mcfg, mix_seed(tcfg.seed, hash_string("moa-init")));
    moa_model->adopt_backbone(backbone);
    current = &*moa_model;
    opt2.emplace(current->parameters(), tcfg);
    opt = &*opt2;
  }
  result.phase2_start_val =
      validation_loss(*current, probe, tcfg.lambda_importance);

  for (size_t step = tcfg.phase1_steps + 1;
       step <= tcfg.phase1_steps + tcfg.phase2_steps; ++step) {
    StepLosses l =
        train_step(*current, sample_batch(), *opt, tcfg, step, dropout_rng);
    log_row(csv, step, 2, noam_lr(step, mcfg.d_model, tcfg.warmup_steps), l);
    result.history.push_back(l);
    if (step % tcfg.checkpoint_every == 0)
      save_checkpoint((fs::path(out_dir) / "latest.ckpt").string(), *current,
                      {{"step", step}, {"phase", 2},
                       {"train_config", tcfg.to_json()}});
  }
  if (!csv) throw IoError("metrics log write failed in '" + out_dir + "'");
  csv.close();

  result.final_ckpt = (fs::path(out_dir) / "final.ckpt").string();
  save_checkpoint(result.final_ckpt, *current,
                  {{"step", tcfg.phase1_steps + tcfg.phase2_steps},
                   {"phase", 2},
                   {"train_config", tcfg.to_json()}});
  if (mcfg.moa_enabled) {
    result.moa_ckpt = (fs::path(out_dir) / "moa.ckpt").string();
    save_checkpoint(result.moa_ckpt, *current,
                    {{"step", tcfg.phase1_steps + tcfg.phase2_steps},
                     {"phase", 2},
                     {"train_config", tcfg.to_json()}});
  }
  return result;
}

}  // namespace moatts

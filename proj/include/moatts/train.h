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
#include <vector>

#include "moatts/data_synth.h"
#include "moatts/model.h"

namespace moatts {

struct TrainConfig {
  size_t phase1_steps = 2000;
  size_t phase2_steps = 2000;
  size_t batch_size = 16;
  size_t warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double lambda_importance = 0.1;
  double grad_clip = 1.0;
  uint64_t seed = 1;
  size_t checkpoint_every = 1000;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// d_model^{-0.5} * min(step^{-0.5}, step * warmup^{-1.5}); step counts from 1.
double noam_lr(size_t step, size_t d_model, size_t warmup);

class AdamOptimizer {
 public:
  AdamOptimizer(NamedParams params, const TrainConfig& cfg);

  // Applies global-norm gradient clipping, one bias-corrected Adam update at
  // the given rate, then clears the gradients. Returns the pre-clip norm.
  double step(double lr);

  const NamedParams& params() const { return params_; }

 private:
  NamedParams params_;
  double beta1_, beta2_, eps_, clip_;
  size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct StepLosses {
  double total = 0.0;
  double mel = 0.0;
  double dur = 0.0;
  double pitch = 0.0;
  double energy = 0.0;
  double importance = 0.0;
};

// Teacher-forced batch loss: mel + log-duration + pitch + energy MSEs plus
// lambda * (importance loss averaged over MoA sites). When `graph` is given
// the loss node is returned connected for backward; dropout fires only if
// dropout_rng is non-null.
StepLosses batch_loss(const TtsModel& model,
                      const std::vector<const Utterance*>& batch,
                      double lambda_importance, Rng* dropout_rng,
                      Graph* graph, Tensor* loss_out);

// One optimization step; throws ContractError naming the first non-finite
// loss component.
StepLosses train_step(TtsModel& model,
                      const std::vector<const Utterance*>& batch,
                      AdamOptimizer& opt, const TrainConfig& cfg, size_t step,
                      Rng& dropout_rng);

// Dropout-free teacher-forced loss, no parameter update.
StepLosses validation_loss(const TtsModel& model,
                           const std::vector<const Utterance*>& batch,
                           double lambda_importance);

void save_checkpoint(const std::string& path, const TtsModel& model,
                     const nlohmann::json& extra_meta);
// Returns the checkpoint's meta block; parameters go into `model`.
nlohmann::json load_checkpoint(const std::string& path, TtsModel& model);

struct TrainResult {
  std::string backbone_ckpt;
  std::string final_ckpt;  // same as moa_ckpt for MoA configs
  std::string moa_ckpt;    // empty for baseline runs
  std::string metrics_csv;
  StepLosses phase1_final_val;  // fixed probe batch, end of phase 1
  StepLosses phase2_start_val;  // same batch, phase-2 model before any update
  std::vector<StepLosses> history;
};

// Phase 1 trains the MoA-free backbone; phase 2 inserts zero-initialized MoA
// modules when the config asks for them (otherwise keeps training the
// backbone for the same total budget) and updates all parameters. The step
// counter and learning-rate schedule run continuously across phases.
TrainResult train_two_phase(const ModelConfig& mcfg, const TrainConfig& tcfg,
                            const Corpus& corpus, const std::string& out_dir);

}  // namespace moatts

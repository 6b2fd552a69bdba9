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
#include <string>
#include <vector>

#include "moatts/data_synth.h"
#include "moatts/model.h"

namespace moatts {

// 10 * sqrt(2) / ln(10), the mel-cepstral distortion scale factor.
inline constexpr double kMcdConstant = 6.141851463713754;
inline constexpr size_t kMcdCoeffs = 12;
inline constexpr double kVoicingEnergyThreshold = 0.5;

// DCT-II cepstra of one log-mel frame, coefficients 0..n_coeffs inclusive.
std::vector<double> mel_cepstra(const double* frame, size_t n_mels,
                                size_t n_coeffs);

// Frame-aligned mel-cepstral distortion in dB over coefficients 1..12.
// Lengths must match; the protocol forbids time warping.
double mcd(const MelSpectrogram& pred, const MelSpectrogram& ref);

std::vector<bool> voicing_from_energy(
    const Tensor& energy, double threshold = kVoicingEnergyThreshold);

// RMSE over voiced frames, log-Hz domain; needs at least one voiced frame.
double f0_rmse(const Tensor& pitch_pred, const Tensor& pitch_ref,
               const std::vector<bool>& voiced);

// RMSE over phonemes in linear frame counts (callers round predictions the
// same way inference does).
double duration_rmse(const std::vector<int>& dur_pred,
                     const std::vector<int>& dur_ref);

struct UtteranceMetrics {
  std::string utterance_id;
  std::string speaker_id;
  double mcd = 0.0;
  double f0_rmse = 0.0;
  double dur_rmse = 0.0;
};

struct SpeakerReport {
  std::string speaker_id;
  std::string group;
  double mcd_mean = 0.0;
  double f0_rmse_mean = 0.0;
  double dur_rmse_mean = 0.0;
  size_t n_utts = 0;
};

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

// Linear-interpolation (type-7) quartiles.
Quartiles quartiles(std::vector<double> values);

struct MetricSummary {
  Quartiles mcd;
  Quartiles f0_rmse;
  Quartiles dur_rmse;
  size_t n_speakers = 0;
};

struct AggregateReport {
  std::vector<SpeakerReport> speakers;
  MetricSummary overall;
  std::map<std::string, MetricSummary> by_style;  // "pro" / "non"
};

// Per-speaker means, then quartiles across speakers, overall and split by
// professional-style analogue group.
AggregateReport aggregate(const std::vector<UtteranceMetrics>& utts,
                          const std::vector<SpeakerSpec>& speakers);

// Ground-truth-duration synthesis for aligned MCD/F0, free-running duration
// predictions for duration RMSE.
UtteranceMetrics evaluate_utterance(const TtsModel& model, const Utterance& u,
                                    GateTrace* trace = nullptr);
std::vector<UtteranceMetrics> evaluate_split(const TtsModel& model,
                                             const Corpus& corpus,
                                             const std::string& split,
                                             GateTrace* trace = nullptr);

struct RtfResult {
  double rtf_median = 0.0;
  double rtf_iqr = 0.0;
};

// Wall time / synthesized audio seconds (10 ms frames); single-threaded,
// median over `repeats` passes after two warmup passes.
RtfResult rtf_bench(const TtsModel& model,
                    const std::vector<const Utterance*>& utterances,
                    size_t repeats);

struct CorrelationResult {
  std::string site_id;
  std::vector<std::string> speaker_ids;
  std::vector<std::string> groups;
  std::vector<double> matrix;  // row-major n x n; NaN marks undefined pairs

  double at(size_t i, size_t j) const {
    return matrix[i * speaker_ids.size() + j];
  }
};

// Pearson correlation of per-speaker gate-weight vectors at one site. Uses
// each speaker's first trace record for that site; zero-variance vectors
// yield NaN entries with a warning on stderr.
CorrelationResult gating_correlation(
    const GateTrace& trace, const std::string& site_id,
    const std::map<std::string, std::string>& speaker_groups);

void write_gate_trace_csv(const std::string& path, const GateTrace& trace,
                          const nlohmann::json& provenance);
void write_correlation_csv(const std::string& path,
                           const CorrelationResult& corr,
                           const nlohmann::json& provenance);
void write_report_csv(const std::string& path, const AggregateReport& report,
                      const nlohmann::json& provenance);
nlohmann::json report_to_json(const AggregateReport& report);

}  // namespace moatts

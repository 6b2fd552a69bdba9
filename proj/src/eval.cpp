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

#include "moatts/eval.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

namespace moatts {

std::vector<double> mel_cepstra(const double* frame, size_t n_mels,
                                size_t n_coeffs) {
  std::vector<double> c(n_coeffs + 1, 0.0);
  for (size_t k = 0; k <= n_coeffs; ++k)
    for (size_t m = 0; m < n_mels; ++m)
      c[k] += frame[m] * std::cos(M_PI * static_cast<double>(k) *
                                  (static_cast<double>(m) + 0.5) /
                                  static_cast<double>(n_mels));
  return c;
}

double mcd(const MelSpectrogram& pred, const MelSpectrogram& ref) {
  if (pred.frames.shape() != ref.frames.shape())
    throw DimensionError("mcd: aligned inputs required, got " +
                         shape_str(pred.frames.shape()) + " vs " +
                         shape_str(ref.frames.shape()));
  size_t t_total = pred.length(), n_mels = pred.frames.extent(1);
  if (t_total == 0) throw ContractError("mcd: empty spectrogram");
  double acc = 0.0;
  for (size_t t = 0; t < t_total; ++t) {
    auto cp = mel_cepstra(&pred.frames.data()[t * n_mels], n_mels, kMcdCoeffs);
    auto cr = mel_cepstra(&ref.frames.data()[t * n_mels], n_mels, kMcdCoeffs);
    double sq = 0.0;
    for (size_t d = 1; d <= kMcdCoeffs; ++d)
      sq += (cp[d] - cr[d]) * (cp[d] - cr[d]);
    acc += std::sqrt(sq);
  }
  return kMcdConstant * acc / static_cast<double>(t_total);
}

std::vector<bool> voicing_from_energy(const Tensor& energy, double threshold) {
  std::vector<bool> voiced(energy.size());
  for (size_t t = 0; t < energy.size(); ++t)
    voiced[t] = energy.data()[t] > threshold;
  return voiced;
}

double f0_rmse(const Tensor& pitch_pred, const Tensor& pitch_ref,
               const std::vector<bool>& voiced) {
  if (pitch_pred.size() != pitch_ref.size() ||
      voiced.size() != pitch_ref.size())
    throw DimensionError("f0_rmse: length mismatch");
  double acc = 0.0;
  size_t n = 0;
  for (size_t t = 0; t < voiced.size(); ++t) {
    if (!voiced[t]) continue;
    double d = pitch_pred.data()[t] - pitch_ref.data()[t];
    acc += d * d;
    ++n;
  }
  if (n == 0) throw ContractError("f0_rmse: no voiced frames");
  return std::sqrt(acc / static_cast<double>(n));
}

double duration_rmse(const std::vector<int>& dur_pred,
                     const std::vector<int>& dur_ref) {
  if (dur_pred.size() != dur_ref.size() || dur_ref.empty())
    throw DimensionError("duration_rmse: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < dur_ref.size(); ++i) {
    double d = static_cast<double>(dur_pred[i] - dur_ref[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(dur_ref.size()));
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw ContractError("quartiles: empty input");
  std::sort(values.begin(), values.end());
  auto type7 = [&](double p) {
    double h = p * static_cast<double>(values.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(h));
    size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - std::floor(h)) * (values[hi] - values[lo]);
  };
  return {type7(0.25), type7(0.5), type7(0.75)};
}

namespace {

MetricSummary summarize(const std::vector<SpeakerReport>& reports) {
  MetricSummary s;
  std::vector<double> m, f, d;
  for (const auto& r : reports) {
    m.push_back(r.mcd_mean);
    f.push_back(r.f0_rmse_mean);
    d.push_back(r.dur_rmse_mean);
  }
  s.mcd = quartiles(m);
  s.f0_rmse = quartiles(f);
  s.dur_rmse = quartiles(d);
  s.n_speakers = reports.size();
  return s;
}

}  // namespace

AggregateReport aggregate(const std::vector<UtteranceMetrics>& utts,
                          const std::vector<SpeakerSpec>& speakers) {
  if (utts.empty()) throw ContractError("aggregate: no utterance metrics");
  std::map<std::string, SpeakerReport> by_speaker;
  for (const auto& u : utts) {
    SpeakerReport& r = by_speaker[u.speaker_id];
    r.speaker_id = u.speaker_id;
    r.mcd_mean += u.mcd;
    r.f0_rmse_mean += u.f0_rmse;
    r.dur_rmse_mean += u.dur_rmse;
    ++r.n_utts;
  }
  AggregateReport report;
  for (auto& [id, r] : by_speaker) {
    double inv = 1.0 / static_cast<double>(r.n_utts);
    r.mcd_mean *= inv;
    r.f0_rmse_mean *= inv;
    r.dur_rmse_mean *= inv;
    for (const auto& s : speakers)
      if (s.speaker_id == id) r.group = group_label(s.group);
    if (r.group.empty())
      throw ContractError("aggregate: unknown speaker '" + id + "'");
    report.speakers.push_back(r);
  }
  report.overall = summarize(report.speakers);
  std::vector<SpeakerReport> pro, non;
  for (const auto& r : report.speakers) {
    if (group_is_pro(group_from_label(r.group)))
      pro.push_back(r);
    else
      non.push_back(r);
  }
  if (!pro.empty()) report.by_style["pro"] = summarize(pro);
  if (!non.empty()) report.by_style["non"] = summarize(non);
  return report;
}

UtteranceMetrics evaluate_utterance(const TtsModel& model, const Utterance& u,
                                    GateTrace* trace) {
  ForwardContext ctx;
  ctx.trace = trace;
  ctx.utterance_id = u.utterance_id;
  ctx.speaker_id = u.speaker_id;
  SynthesisResult aligned =
      model.synthesize(u.phonemes, u.ref_features, &u.durations, &ctx);

  UtteranceMetrics m;
  m.utterance_id = u.utterance_id;
  m.speaker_id = u.speaker_id;
  m.mcd = mcd(aligned.mel, u.mel);
  m.f0_rmse = f0_rmse(aligned.pitch_pred, u.pitch,
                      voicing_from_energy(u.energy));
  m.dur_rmse =
      duration_rmse(durations_from_log_pred(aligned.dur_pred), u.durations);
  return m;
}

std::vector<UtteranceMetrics> evaluate_split(const TtsModel& model,
                                             const Corpus& corpus,
                                             const std::string& split,
                                             GateTrace* trace) {
  std::vector<UtteranceMetrics> out;
  for (const auto& e : corpus.split(split))
    out.push_back(
        evaluate_utterance(model, load_utterance(corpus.dir, e), trace));
  if (out.empty())
    throw ContractError("evaluate_split: no utterances in split '" + split +
                        "'");
  return out;
}

RtfResult rtf_bench(const TtsModel& model,
                    const std::vector<const Utterance*>& utterances,
                    size_t repeats) {
  if (utterances.empty() || repeats == 0)
    throw ContractError("rtf_bench: need utterances and repeats >= 1");
  using clock = std::chrono::steady_clock;
  auto one_pass = [&] {
    double seconds = 0.0, audio = 0.0;
    for (const Utterance* u : utterances) {
      auto start = clock::now();
      SynthesisResult r = model.synthesize(u->phonemes, u->ref_features);
      auto stop = clock::now();
      seconds += std::chrono::duration<double>(stop - start).count();
      audio += r.mel.seconds();
    }
    if (seconds < 1e-4)
      std::cerr << "rtf_bench: warning: pass took " << seconds
                << " s, timer resolution may dominate; use longer "
                   "utterances\n";
    return seconds / audio;
  };
  one_pass();
  one_pass();  // two warmups
  std::vector<double> rtfs;
  for (size_t r = 0; r < repeats; ++r) rtfs.push_back(one_pass());
  Quartiles q = quartiles(rtfs);
  return {q.median, q.q3 - q.q1};
}

CorrelationResult gating_correlation(
    const GateTrace& trace, const std::string& site_id,
    const std::map<std::string, std::string>& speaker_groups) {
  CorrelationResult out;
  out.site_id = site_id;
  std::map<std::string, std::vector<double>> first_by_speaker;
  for (const auto& rec : trace) {
    if (rec.site_id != site_id) continue;
    first_by_speaker.emplace(rec.speaker_id, rec.weights);
  }
  if (first_by_speaker.size() < 2)
    throw ContractError("gating_correlation: need at least two speakers with "
                        "traces at site '" + site_id + "'");

  std::vector<std::vector<double>> vecs;
  for (const auto& [spk, w] : first_by_speaker) {
    out.speaker_ids.push_back(spk);
    auto it = speaker_groups.find(spk);
    out.groups.push_back(it == speaker_groups.end() ? "" : it->second);
    vecs.push_back(w);
  }

  size_t n = vecs.size();
  std::vector<double> mean(n, 0.0), var(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (double v : vecs[i]) mean[i] += v;
    mean[i] /= static_cast<double>(vecs[i].size());
    for (double v : vecs[i]) var[i] += (v - mean[i]) * (v - mean[i]);
    if (var[i] == 0.0)
      std::cerr << "gating_correlation: warning: zero-variance weights for "
                << out.speaker_ids[i] << ", correlations undefined\n";
  }

  out.matrix.assign(n * n, std::numeric_limits<double>::quiet_NaN());
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      if (var[i] == 0.0 || var[j] == 0.0) continue;
      double cov = 0.0;
      for (size_t k = 0; k < vecs[i].size(); ++k)
        cov += (vecs[i][k] - mean[i]) * (vecs[j][k] - mean[j]);
      out.matrix[i * n + j] = cov / std::sqrt(var[i] * var[j]);
    }
  }
  return out;
}

namespace {

std::ofstream open_out(const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

void write_provenance(std::ofstream& out, const nlohmann::json& provenance) {
  out << "# provenance: " << provenance.dump() << "\n";
}

}  // namespace

void write_gate_trace_csv(const std::string& path, const GateTrace& trace,
                          const nlohmann::json& provenance) {
  std::ofstream out = open_out(path);
  write_provenance(out, provenance);
  size_t n = trace.empty() ? 0 : trace.front().weights.size();
  out << "utterance_id,speaker_id,site_id,layer_index";
  for (size_t i = 1; i <= n; ++i) out << ",w_" << i;
  out << "\n";
  for (const auto& rec : trace) {
    out << rec.utterance_id << "," << rec.speaker_id << "," << rec.site_id
        << "," << rec.layer_index;
    char buf[32];
    for (double w : rec.weights) {
      std::snprintf(buf, sizeof(buf), ",%.17g", w);
      out << buf;
    }
    out << "\n";
  }
}

void write_correlation_csv(const std::string& path,
                           const CorrelationResult& corr,
                           const nlohmann::json& provenance) {
  std::ofstream out = open_out(path);
  write_provenance(out, provenance);
  out << "speaker_id,group";
  for (const auto& id : corr.speaker_ids) out << "," << id;
  out << "\n";
  size_t n = corr.speaker_ids.size();
  for (size_t i = 0; i < n; ++i) {
    out << corr.speaker_ids[i] << "," << corr.groups[i];
    char buf[32];
    for (size_t j = 0; j < n; ++j) {
      double v = corr.at(i, j);
      if (std::isnan(v))
        out << ",";
      else {
        std::snprintf(buf, sizeof(buf), ",%.17g", v);
        out << buf;
      }
    }
    out << "\n";
  }
}

void write_report_csv(const std::string& path, const AggregateReport& report,
                      const nlohmann::json& provenance) {
  std::ofstream out = open_out(path);
  write_provenance(out, provenance);
  out << "speaker_id,group,n_utts,mcd_mean,f0_rmse_mean,dur_rmse_mean\n";
  char buf[128];
  for (const auto& r : report.speakers) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%.17g,%.17g,%.17g\n",
                  r.speaker_id.c_str(), r.group.c_str(), r.n_utts, r.mcd_mean,
                  r.f0_rmse_mean, r.dur_rmse_mean);
    out << buf;
  }
}

nlohmann::json report_to_json(const AggregateReport& report) {
  auto q_json = [](const Quartiles& q) {
    return nlohmann::json{{"q1", q.q1}, {"median", q.median}, {"q3", q.q3}};
  };
  auto s_json = [&](const MetricSummary& s) {
    return nlohmann::json{{"n_speakers", s.n_speakers},
                          {"mcd", q_json(s.mcd)},
                          {"f0_rmse", q_json(s.f0_rmse)},
                          {"dur_rmse", q_json(s.dur_rmse)}};
  };
  nlohmann::json j;
  j["overall"] = s_json(report.overall);
  for (const auto& [style, summary] : report.by_style)
    j["by_style"][style] = s_json(summary);
  j["speakers"] = nlohmann::json::array();
  for (const auto& r : report.speakers)
    j["speakers"].push_back({{"speaker_id", r.speaker_id},
                             {"group", r.group},
                             {"n_utts", r.n_utts},
                             {"mcd_mean", r.mcd_mean},
                             {"f0_rmse_mean", r.f0_rmse_mean},
                             {"dur_rmse_mean", r.dur_rmse_mean}});
  return j;
}

}  // namespace moatts

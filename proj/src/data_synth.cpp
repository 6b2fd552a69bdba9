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

#include "moatts/data_synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "moatts/io.h"

namespace moatts {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kTemplateSeed = 0x7e3a11ce;  // per-phoneme mel templates
constexpr uint64_t kRefViewSeed = 0x5ca1ab1e;   // fixed reference-view matrices
constexpr double kRefNoiseStd = 0.05;
constexpr double kMelDetailStd = 0.15;  // irreducible per-bin detail

// Deterministic per-phoneme spectral template, shared across all corpora.
std::vector<double> phoneme_template(int phoneme) {
  Rng rng(mix_seed(kTemplateSeed, static_cast<uint64_t>(phoneme)));
  std::vector<double> tmpl(kSynthMels);
  for (auto& v : tmpl) v = rng.normal(0.0, 0.5);
  return tmpl;
}

// Fixed linear view mixing (pitch, energy, mel) into one reference layer.
std::vector<double> ref_view_matrix(size_t layer) {
  Rng rng(mix_seed(kRefViewSeed, layer));
  std::vector<double> w((2 + kSynthMels) * kSynthRefFeat);
  for (auto& v : w) v = rng.normal(0.0, 0.35);
  return w;
}

}  // namespace

const char* group_label(Group g) {
  switch (g) {
    case Group::kFPro: return "F-pro";
    case Group::kFNon: return "F-non";
    case Group::kMPro: return "M-pro";
    case Group::kMNon: return "M-non";
  }
  throw ContractError("unknown group");
}

Group group_from_label(const std::string& label) {
  for (Group g : {Group::kFPro, Group::kFNon, Group::kMPro, Group::kMNon})
    if (label == group_label(g)) return g;
  throw ContractError("unknown group label '" + label + "'");
}

bool group_is_pro(Group g) {
  return g == Group::kFPro || g == Group::kMPro;
}

bool group_is_female(Group g) {
  return g == Group::kFPro || g == Group::kFNon;
}

std::vector<SpeakerSpec> make_speakers(size_t n_per_group, uint64_t seed,
                                       size_t n_val_per_group,
                                       size_t n_test_per_group) {
  if (n_per_group < 1) throw ContractError("make_speakers: n_per_group < 1");
  if (n_val_per_group + n_test_per_group >= n_per_group)
    throw ContractError("make_speakers: splits leave no training speakers");
  std::vector<SpeakerSpec> specs;
  for (Group g : {Group::kFPro, Group::kFNon, Group::kMPro, Group::kMNon}) {
    for (size_t i = 0; i < n_per_group; ++i) {
      SpeakerSpec s;
      char idx[32];
      std::snprintf(idx, sizeof(idx), "%02zu", i);
      s.speaker_id = std::string(group_label(g)) + "-" + idx;
      s.group = g;
      size_t n_train = n_per_group - n_val_per_group - n_test_per_group;
      s.split = i < n_train          ? "train"
                : i < n_train + n_val_per_group ? "val"
                                                : "test";
      Rng rng(mix_seed(seed, hash_string(s.speaker_id)));
      double center = group_is_female(g) ? std::log(220.0) : std::log(110.0);
      s.base_log_f0 = rng.normal(center, 0.12);
      s.f0_range = rng.uniform(0.15, 0.30);
      s.tempo = rng.uniform(0.8, 1.25);
      s.spectral_tilt = rng.uniform(-1.0, 1.0);
      s.style_dynamics = group_is_pro(g) ? rng.uniform(0.8, 1.2)
                                         : rng.uniform(0.3, 0.6);
      specs.push_back(std::move(s));
    }
  }
  return specs;
}

Utterance render_utterance(const SpeakerSpec& spec, uint64_t text_seed,
                           const RenderOptions& opts) {
  if (opts.min_phonemes < 1 || opts.max_phonemes < opts.min_phonemes ||
      opts.min_dur < 1 || opts.max_dur < opts.min_dur)
    throw ContractError("render_utterance: invalid shape options");
  Rng rng(mix_seed(hash_string(spec.speaker_id), text_seed));

  Utterance u;
  u.speaker_id = spec.speaker_id;
  size_t p = opts.min_phonemes +
             rng.below(opts.max_phonemes - opts.min_phonemes + 1);
  u.phonemes.resize(p);
  for (auto& id : u.phonemes) id = static_cast<int>(rng.below(kSynthVocab));
  u.durations.resize(p);
  size_t t_total = 0;
  for (auto& d : u.durations) {
    double base = static_cast<double>(
        opts.min_dur + rng.below(opts.max_dur - opts.min_dur + 1));
    d = std::max(1, static_cast<int>(std::lround(base * spec.tempo)));
    t_total += static_cast<size_t>(d);
  }

  // Smooth contour shared by pitch and energy; "pro" voices swing wider.
  double f1 = 1.0 + static_cast<double>(rng.below(2));
  double f2 = 3.0 + static_cast<double>(rng.below(3));
  double ph1 = rng.uniform(0.0, 2.0 * M_PI);
  double ph2 = rng.uniform(0.0, 2.0 * M_PI);
  std::vector<double> contour(t_total);
  for (size_t t = 0; t < t_total; ++t) {
    double x = static_cast<double>(t) / static_cast<double>(t_total);
    contour[t] = spec.style_dynamics *
                 (0.6 * std::sin(2.0 * M_PI * f1 * x + ph1) +
                  0.4 * std::sin(2.0 * M_PI * f2 * x + ph2));
  }

  u.pitch = Tensor({t_total});
  u.energy = Tensor({t_total});
  for (size_t t = 0; t < t_total; ++t) {
    u.pitch.data()[t] = spec.base_log_f0 + spec.f0_range * contour[t];
    u.energy.data()[t] = 0.6 + 0.3 * contour[t] + rng.normal(0.0, 0.03);
  }

  u.mel.frames = Tensor({t_total, kSynthMels});
  size_t t = 0;
  for (size_t i = 0; i < p; ++i) {
    std::vector<double> tmpl = phoneme_template(u.phonemes[i]);
    for (int d = 0; d < u.durations[i]; ++d, ++t) {
      for (size_t m = 0; m < kSynthMels; ++m) {
        double band = 2.0 * static_cast<double>(m) /
                          static_cast<double>(kSynthMels - 1) -
                      1.0;
        u.mel.frames.data()[t * kSynthMels + m] =
            tmpl[m] + spec.spectral_tilt * band +
            0.6 * (u.energy.data()[t] - 0.6) + 0.4 * contour[t] +
            rng.normal(0.0, kMelDetailStd);
      }
    }
  }

  u.ref_features.features =
      Tensor({kSynthRefLayers, t_total, kSynthRefFeat});
  size_t in_dim = 2 + kSynthMels;
  for (size_t l = 0; l < kSynthRefLayers; ++l) {
    std::vector<double> w = ref_view_matrix(l);
    for (size_t tt = 0; tt < t_total; ++tt) {
      std::vector<double> v(in_dim);
      v[0] = u.pitch.data()[tt];
      v[1] = u.energy.data()[tt];
      for (size_t m = 0; m < kSynthMels; ++m)
        v[2 + m] = u.mel.frames.data()[tt * kSynthMels + m];
      for (size_t f = 0; f < kSynthRefFeat; ++f) {
        double acc = 0.0;
        for (size_t k = 0; k < in_dim; ++k)
          acc += v[k] * w[k * kSynthRefFeat + f];
        u.ref_features.features
            .data()[(l * t_total + tt) * kSynthRefFeat + f] =
            acc + rng.normal(0.0, kRefNoiseStd);
      }
    }
  }
  return u;
}

const SpeakerSpec& Corpus::speaker(const std::string& id) const {
  for (const auto& s : speakers)
    if (s.speaker_id == id) return s;
  throw ContractError("corpus has no speaker '" + id + "'");
}

std::vector<CorpusEntry> Corpus::split(const std::string& name) const {
  std::vector<CorpusEntry> out;
  for (const auto& e : entries)
    if (e.split == name) out.push_back(e);
  return out;
}

namespace {

nlohmann::json speaker_to_json(const SpeakerSpec& s) {
  return {{"speaker_id", s.speaker_id}, {"group", group_label(s.group)},
          {"split", s.split},           {"base_log_f0", s.base_log_f0},
          {"f0_range", s.f0_range},     {"tempo", s.tempo},
          {"spectral_tilt", s.spectral_tilt},
          {"style_dynamics", s.style_dynamics}};
}

SpeakerSpec speaker_from_json(const nlohmann::json& j) {
  SpeakerSpec s;
  s.speaker_id = j.at("speaker_id").get<std::string>();
  s.group = group_from_label(j.at("group").get<std::string>());
  s.split = j.at("split").get<std::string>();
  s.base_log_f0 = j.at("base_log_f0").get<double>();
  s.f0_range = j.at("f0_range").get<double>();
  s.tempo = j.at("tempo").get<double>();
  s.spectral_tilt = j.at("spectral_tilt").get<double>();
  s.style_dynamics = j.at("style_dynamics").get<double>();
  return s;
}

void write_utterance(const std::string& abs_path, const Utterance& u) {
  std::vector<NamedArray> arrays;
  NamedArray ph{"phonemes", {u.phonemes.size()}, {}};
  for (int id : u.phonemes) ph.data.push_back(static_cast<double>(id));
  NamedArray du{"durations", {u.durations.size()}, {}};
  for (int d : u.durations) du.data.push_back(static_cast<double>(d));
  arrays.push_back(std::move(ph));
  arrays.push_back(std::move(du));
  arrays.push_back({"pitch", u.pitch.shape(), u.pitch.data()});
  arrays.push_back({"energy", u.energy.shape(), u.energy.data()});
  arrays.push_back({"mel", u.mel.frames.shape(), u.mel.frames.data()});
  arrays.push_back({"ref_features", u.ref_features.features.shape(),
                    u.ref_features.features.data()});
  write_tensor_file(abs_path,
                    {{"kind", "utterance"},
                     {"utterance_id", u.utterance_id},
                     {"speaker_id", u.speaker_id}},
                    arrays);
}

}  // namespace

Corpus build_corpus(const std::string& dir,
                    const std::vector<SpeakerSpec>& speakers,
                    size_t utts_per_speaker, uint64_t seed, bool force,
                    const RenderOptions& opts) {
  if (speakers.empty() || utts_per_speaker < 1)
    throw ContractError("build_corpus: need speakers and utts_per_speaker >= 1");
  fs::path root(dir);
  fs::path manifest = root / "manifest.jsonl";
  if (fs::exists(manifest) && !force)
    throw IoError("corpus already exists at '" + dir +
                  "' (pass force to overwrite)");
  fs::create_directories(root / "utts");

  Corpus corpus;
  corpus.dir = dir;
  corpus.seed = seed;
  corpus.speakers = speakers;

  for (const auto& spec : speakers) {
    for (size_t i = 0; i < utts_per_speaker; ++i) {
      std::string utt_id = spec.speaker_id + "-utt-" + std::to_string(i);
      Utterance u = render_utterance(spec, mix_seed(seed, hash_string(utt_id)),
                                     opts);
      u.utterance_id = utt_id;
      CorpusEntry e{utt_id, spec.speaker_id, group_label(spec.group),
                    spec.split, "utts/" + utt_id + ".bin"};
      write_utterance((root / e.path).string(), u);
      corpus.entries.push_back(std::move(e));
    }
  }

  nlohmann::json speakers_json = nlohmann::json::array();
  for (const auto& s : speakers) speakers_json.push_back(speaker_to_json(s));
  {
    std::ofstream out(root / "speakers.json.tmp", std::ios::trunc);
    out << nlohmann::json{{"seed", seed}, {"speakers", speakers_json}}.dump(2)
        << "\n";
  }
  fs::rename(root / "speakers.json.tmp", root / "speakers.json");

  // Manifest last, atomically: its presence marks a complete corpus.
  {
    std::ofstream out(root / "manifest.jsonl.tmp", std::ios::trunc);
    for (const auto& e : corpus.entries)
      out << nlohmann::json{{"utterance_id", e.utterance_id},
                            {"speaker_id", e.speaker_id},
                            {"group", e.group},
                            {"split", e.split},
                            {"path", e.path}}
                 .dump()
          << "\n";
    if (!out) throw IoError("manifest write failed in '" + dir + "'");
  }
  fs::rename(root / "manifest.jsonl.tmp", manifest);
  return corpus;
}

Corpus load_corpus(const std::string& dir) {
  fs::path root(dir);
  std::ifstream sp(root / "speakers.json");
  if (!sp) throw IoError("no speakers.json in '" + dir + "'");
  nlohmann::json sj = nlohmann::json::parse(sp, nullptr, false);
  if (sj.is_discarded()) throw IoError("corrupt speakers.json in '" + dir + "'");

  Corpus corpus;
  corpus.dir = dir;
  corpus.seed = sj.value("seed", 0ULL);
  for (const auto& j : sj.at("speakers"))
    corpus.speakers.push_back(speaker_from_json(j));

  std::ifstream mf(root / "manifest.jsonl");
  if (!mf) throw IoError("no manifest.jsonl in '" + dir + "'");
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError("corrupt manifest line in '" + dir + "'");
    corpus.entries.push_back({j.at("utterance_id").get<std::string>(),
                              j.at("speaker_id").get<std::string>(),
                              j.at("group").get<std::string>(),
                              j.at("split").get<std::string>(),
                              j.at("path").get<std::string>()});
  }
  return corpus;
}

Utterance load_utterance(const std::string& dir, const CorpusEntry& entry) {
  TensorFile f = read_tensor_file((fs::path(dir) / entry.path).string());
  Utterance u;
  u.utterance_id = entry.utterance_id;
  u.speaker_id = entry.speaker_id;
  for (double v : f.get("phonemes").data)
    u.phonemes.push_back(static_cast<int>(v));
  for (double v : f.get("durations").data)
    u.durations.push_back(static_cast<int>(v));
  auto to_tensor = [&](const char* name) {
    const NamedArray& a = f.get(name);
    Tensor t(a.shape);
    t.data() = a.data;
    return t;
  };
  u.pitch = to_tensor("pitch");
  u.energy = to_tensor("energy");
  u.mel.frames = to_tensor("mel");
  u.ref_features.features = to_tensor("ref_features");
  if (u.pitch.size() != u.mel.length() || u.energy.size() != u.mel.length())
    throw IoError("utterance '" + entry.utterance_id + "' length mismatch");
  return u;
}

}  // namespace moatts

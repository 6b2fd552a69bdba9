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

#include "moatts/model.h"

namespace moatts {

// Synthetic corpus dimensions; they match the ModelConfig defaults.
inline constexpr size_t kSynthMels = 20;
inline constexpr size_t kSynthVocab = 40;
inline constexpr size_t kSynthRefLayers = 4;
inline constexpr size_t kSynthRefFeat = 16;

enum class Group { kFPro, kFNon, kMPro, kMNon };

const char* group_label(Group g);
Group group_from_label(const std::string& label);
bool group_is_pro(Group g);
bool group_is_female(Group g);

// Parametric voice: female voices center near 220 Hz, male near 110 Hz
// (log-domain draws); "pro" groups get strictly larger style_dynamics than
// "non" groups.
struct SpeakerSpec {
  std::string speaker_id;
  Group group = Group::kFPro;
  std::string split;  // train / val / test
  double base_log_f0 = 0.0;
  double f0_range = 0.0;
  double tempo = 1.0;
  double spectral_tilt = 0.0;
  double style_dynamics = 0.0;
};

struct Utterance {
  std::string utterance_id;
  std::string speaker_id;
  std::vector<int> phonemes;
  std::vector<int> durations;  // frames per phoneme, all >= 1
  Tensor pitch;                // [T], log-Hz
  Tensor energy;               // [T]
  MelSpectrogram mel;          // [T, kSynthMels]
  LayeredFeatures ref_features;

  size_t frames() const { return mel.length(); }
};

// Utterance shape knobs; defaults give the standard desk corpus, the
// acceptance corpus shrinks them for fast training.
struct RenderOptions {
  size_t min_phonemes = 8;
  size_t max_phonemes = 30;
  size_t min_dur = 2;  // base frames per phoneme before tempo scaling
  size_t max_dur = 5;
};

// 4 * n_per_group specs with seeded parameter draws; within each group the
// last n_val + n_test speakers go to the val / test splits, so the three
// split speaker sets are disjoint by construction.
std::vector<SpeakerSpec> make_speakers(size_t n_per_group, uint64_t seed,
                                       size_t n_val_per_group = 1,
                                       size_t n_test_per_group = 1);

// Pure function of (spec, text_seed, opts); bit-identical on repeat calls.
Utterance render_utterance(const SpeakerSpec& spec, uint64_t text_seed,
                           const RenderOptions& opts = {});

struct CorpusEntry {
  std::string utterance_id;
  std::string speaker_id;
  std::string group;
  std::string split;
  std::string path;  // utterance payload, relative to the corpus dir
};

struct Corpus {
  std::string dir;
  uint64_t seed = 0;
  std::vector<SpeakerSpec> speakers;
  std::vector<CorpusEntry> entries;

  const SpeakerSpec& speaker(const std::string& id) const;
  std::vector<CorpusEntry> split(const std::string& name) const;
};

// Writes per-utterance payload files plus speakers.json, then the JSONL
// manifest last. Refuses a dir that already holds a manifest unless force.
Corpus build_corpus(const std::string& dir,
                    const std::vector<SpeakerSpec>& speakers,
                    size_t utts_per_speaker, uint64_t seed, bool force = false,
                    const RenderOptions& opts = {});

Corpus load_corpus(const std::string& dir);
Utterance load_utterance(const std::string& dir, const CorpusEntry& entry);

}  // namespace moatts

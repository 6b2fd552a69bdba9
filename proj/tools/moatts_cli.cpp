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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "moatts/eval.h"
#include "moatts/io.h"
#include "moatts/train.h"

namespace fs = std::filesystem;
using namespace moatts;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError("invalid JSON in '" + path + "'");
  return j;
}

struct ModelSelection {
  std::string config_path;
  std::string size = "S";
  std::string moa = "off";  // off | sparse | dense

  ModelConfig resolve() const {
    if (!config_path.empty())
      return ModelConfig::from_json(read_json_file(config_path));
    ModelConfig cfg = ModelConfig::desk(size);
    if (moa == "sparse") {
      cfg.moa_enabled = true;
      cfg.moa.mode = GateMode::kSparse;
    } else if (moa == "dense") {
      cfg.moa_enabled = true;
      cfg.moa.mode = GateMode::kDense;
      cfg.moa.n_adapters = 3;
    } else if (moa != "off") {
      throw ConfigError("--moa must be off, sparse or dense");
    }
    cfg.validate();
    return cfg;
  }

  void add_options(CLI::App* cmd) {
    cmd->add_option("--model-config", config_path,
                    "Model config JSON (overrides --size/--moa)");
    cmd->add_option("--size", size, "Desk size: S, MS, M or L");
    cmd->add_option("--moa", moa, "MoA variant: off, sparse or dense");
  }
};

TtsModel load_model(const std::string& ckpt_path) {
  TensorFile f = read_tensor_file(ckpt_path);
  if (f.meta.value("kind", "") != "checkpoint")
    throw IoError("'" + ckpt_path + "' is not a checkpoint");
  ModelConfig cfg = ModelConfig::from_json(f.meta.at("model_config"));
  TtsModel model(cfg, 0);
  model.load_parameters(f);
  return model;
}

nlohmann::json provenance(const nlohmann::json& config, uint64_t seed) {
  return {{"tool", "moatts"}, {"config", config}, {"seed", seed}};
}

const Utterance load_by_id(const Corpus& corpus, const std::string& utt_id) {
  for (const auto& e : corpus.entries)
    if (e.utterance_id == utt_id) return load_utterance(corpus.dir, e);
  throw ContractError("no utterance '" + utt_id + "' in corpus");
}

int cmd_gen_data(const std::string& out, uint64_t seed, size_t per_group,
                 size_t utts, size_t val_pg, size_t test_pg,
                 const RenderOptions& opts, bool force) {
  auto speakers = make_speakers(per_group, seed, val_pg, test_pg);
  Corpus corpus = build_corpus(out, speakers, utts, seed, force, opts);
  std::printf("wrote corpus: %zu speakers, %zu utterances, dir %s\n",
              corpus.speakers.size(), corpus.entries.size(), out.c_str());
  return 0;
}

int cmd_train(const ModelSelection& sel, const std::string& train_config,
              const std::string& corpus_dir, const std::string& out,
              uint64_t seed_override) {
  ModelConfig mcfg = sel.resolve();
  TrainConfig tcfg = train_config.empty()
                         ? TrainConfig{}
                         : TrainConfig::from_json(read_json_file(train_config));
  if (seed_override != 0) tcfg.seed = seed_override;
  Corpus corpus = load_corpus(corpus_dir);
  TrainResult r = train_two_phase(mcfg, tcfg, corpus, out);
  std::printf("phase-1 checkpoint: %s\n", r.backbone_ckpt.c_str());
  std::printf("final checkpoint:   %s\n", r.final_ckpt.c_str());
  std::printf("metrics log:        %s\n", r.metrics_csv.c_str());
  std::printf("final loss: %.6f\n", r.history.back().total);
  return 0;
}

int cmd_synth(const std::string& ckpt, const std::string& corpus_dir,
              const std::string& utt_id, const std::string& out,
              bool gt_durations, const std::string& cache_dir) {
  TtsModel model = load_model(ckpt);
  Corpus corpus = load_corpus(corpus_dir);
  Utterance u = load_by_id(corpus, utt_id);

  Tensor x_e;
  bool cached = false;
  std::string cache_path;
  if (!cache_dir.empty()) {
    cache_path = (fs::path(cache_dir) / (utt_id + ".emb")).string();
    if (fs::exists(cache_path)) {
      TensorFile f = read_tensor_file(cache_path);
      const NamedArray& a = f.get("embedding");
      x_e = Tensor(a.shape);
      x_e.data() = a.data;
      cached = true;
    }
  }
  if (!cached) {
    x_e = model.embed_reference(u.ref_features);
    if (!cache_dir.empty())
      write_tensor_file(cache_path,
                        {{"kind", "embedding"}, {"utterance_id", utt_id},
                         {"checkpoint", ckpt}},
                        {{"embedding", x_e.shape(), x_e.data()}});
  }

  SynthesisResult r = model.synthesize_embedded(
      u.phonemes, x_e, gt_durations ? &u.durations : nullptr, nullptr);
  nlohmann::json meta = provenance(model.config().to_json(), corpus.seed);
  meta["kind"] = "mel";
  meta["utterance_id"] = utt_id;
  meta["checkpoint"] = ckpt;
  meta["gt_durations"] = gt_durations;
  write_tensor_file(
      out, meta,
      {{"mel", r.mel.frames.shape(), r.mel.frames.data()},
       {"pitch_pred", r.pitch_pred.shape(), r.pitch_pred.data()},
       {"energy_pred", r.energy_pred.shape(), r.energy_pred.data()},
       {"dur_pred", r.dur_pred.shape(), r.dur_pred.data()}});
  std::printf("wrote %s (%zu frames%s)\n", out.c_str(), r.mel.length(),
              cached ? ", cached embedding" : "");
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& corpus_dir,
             const std::string& split, const std::string& out_dir) {
  TtsModel model = load_model(ckpt);
  Corpus corpus = load_corpus(corpus_dir);
  GateTrace trace;
  auto metrics = evaluate_split(model, corpus, split, &trace);
  AggregateReport report = aggregate(metrics, corpus.speakers);

  nlohmann::json prov = provenance(model.config().to_json(), corpus.seed);
  prov["checkpoint"] = ckpt;
  prov["split"] = split;
  write_report_csv((fs::path(out_dir) / "report.csv").string(), report, prov);
  {
    fs::create_directories(out_dir);
    std::ofstream js(fs::path(out_dir) / "report.json", std::ios::trunc);
    nlohmann::json j = report_to_json(report);
    j["provenance"] = prov;
    js << j.dump(2) << "\n";
  }
  if (!trace.empty())
    write_gate_trace_csv((fs::path(out_dir) / "gate_trace.csv").string(),
                         trace, prov);
  std::printf("split %s: %zu speakers, mcd median %.4f dB, "
              "f0 rmse median %.4f, dur rmse median %.4f\n",
              split.c_str(), report.overall.n_speakers,
              report.overall.mcd.median, report.overall.f0_rmse.median,
              report.overall.dur_rmse.median);
  std::printf("reports in %s\n", out_dir.c_str());
  return 0;
}

int cmd_bench(const std::string& ckpt, const std::string& corpus_dir,
              const std::string& split, size_t repeats) {
  TtsModel model = load_model(ckpt);
  Corpus corpus = load_corpus(corpus_dir);
  std::vector<Utterance> utts;
  for (const auto& e : corpus.split(split))
    utts.push_back(load_utterance(corpus.dir, e));
  std::vector<const Utterance*> ptrs;
  for (const auto& u : utts) ptrs.push_back(&u);
  RtfResult r = rtf_bench(model, ptrs, repeats);
  std::printf("rtf median %.6f (iqr %.6f) over %zu repeats, %zu utterances, "
              "single thread\n",
              r.rtf_median, r.rtf_iqr, repeats, ptrs.size());
  return 0;
}

int cmd_analyze_gates(const std::string& ckpt, const std::string& corpus_dir,
                      const std::string& split, const std::string& site,
                      uint64_t seed, const std::string& out) {
  TtsModel model = load_model(ckpt);
  if (!model.config().moa_enabled)
    throw ContractError("analyze-gates: checkpoint has no MoA modules");
  Corpus corpus = load_corpus(corpus_dir);

  // One randomly selected utterance per split speaker, different content.
  Rng rng(mix_seed(seed, hash_string("analyze-gates")));
  std::map<std::string, std::vector<CorpusEntry>> per_speaker;
  for (const auto& e : corpus.split(split)) per_speaker[e.speaker_id].push_back(e);
  GateTrace trace;
  std::map<std::string, std::string> groups;
  for (const auto& [spk, entries] : per_speaker) {
    const CorpusEntry& pick = entries[rng.below(entries.size())];
    Utterance u = load_utterance(corpus.dir, pick);
    ForwardContext ctx;
    ctx.trace = &trace;
    ctx.utterance_id = u.utterance_id;
    ctx.speaker_id = u.speaker_id;
    model.synthesize(u.phonemes, u.ref_features, &u.durations, &ctx);
    groups[spk] = group_label(corpus.speaker(spk).group);
  }
  CorrelationResult corr = gating_correlation(trace, site, groups);
  nlohmann::json prov = provenance(model.config().to_json(), seed);
  prov["checkpoint"] = ckpt;
  prov["site"] = site;
  write_correlation_csv(out, corr, prov);
  std::printf("wrote %zu x %zu correlation matrix for site %s to %s\n",
              corr.speaker_ids.size(), corr.speaker_ids.size(), site.c_str(),
              out.c_str());
  return 0;
}

int cmd_count_params(const ModelSelection& sel) {
  ModelConfig cfg = sel.resolve();
  TtsModel model(cfg, 0);
  ParamCount pc = model.count_parameters();
  std::printf("%-16s %12s\n", "component", "params");
  for (const auto& [component, count] : pc.per_component)
    std::printf("%-16s %12zu\n", component.c_str(), count);
  std::printf("%-16s %12zu\n", "backbone", pc.backbone);
  std::printf("%-16s %12zu\n", "moa_added", pc.moa_added);
  std::printf("%-16s %12zu\n", "total", pc.total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moatts: desk-scale zero-shot TTS with speaker-gated "
               "mixture-of-adapters"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Build a synthetic corpus");
  std::string gen_out;
  uint64_t gen_seed = 1;
  size_t per_group = 8, utts = 50, val_pg = 1, test_pg = 1;
  RenderOptions ropts;
  bool force = false;
  gen->add_option("--out", gen_out, "Corpus directory")->required();
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--speakers-per-group", per_group, "Speakers per group");
  gen->add_option("--utts", utts, "Utterances per speaker");
  gen->add_option("--val-per-group", val_pg, "Validation speakers per group");
  gen->add_option("--test-per-group", test_pg, "Test speakers per group");
  gen->add_option("--min-phonemes", ropts.min_phonemes, "Min phonemes");
  gen->add_option("--max-phonemes", ropts.max_phonemes, "Max phonemes");
  gen->add_option("--min-dur", ropts.min_dur, "Min base frames per phoneme");
  gen->add_option("--max-dur", ropts.max_dur, "Max base frames per phoneme");
  gen->add_flag("--force", force, "Overwrite an existing corpus");

  // train
  auto* train = app.add_subcommand("train", "Two-phase training");
  ModelSelection train_sel;
  std::string train_cfg_path, train_corpus, train_out;
  uint64_t train_seed = 0;
  train_sel.add_options(train);
  train->add_option("--train-config", train_cfg_path, "Train config JSON");
  train->add_option("--corpus", train_corpus, "Corpus directory")->required();
  train->add_option("--out", train_out, "Run output directory")->required();
  train->add_option("--seed", train_seed, "Training seed override");

  // synth
  auto* synth = app.add_subcommand("synth", "Synthesize one utterance");
  std::string sy_ckpt, sy_corpus, sy_utt, sy_out, sy_cache;
  bool sy_gt = false;
  synth->add_option("--checkpoint", sy_ckpt, "Checkpoint file")->required();
  synth->add_option("--corpus", sy_corpus, "Corpus directory")->required();
  synth->add_option("--utterance", sy_utt, "Utterance id")->required();
  synth->add_option("--out", sy_out, "Output mel file")->required();
  synth->add_flag("--gt-durations", sy_gt, "Pin ground-truth durations");
  synth->add_option("--embedding-cache", sy_cache,
                    "Directory for cached speaker embeddings");

  // eval
  auto* evalc = app.add_subcommand("eval", "Objective metrics on a split");
  std::string ev_ckpt, ev_corpus, ev_split = "test", ev_out;
  evalc->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  evalc->add_option("--corpus", ev_corpus, "Corpus directory")->required();
  evalc->add_option("--split", ev_split, "Corpus split");
  evalc->add_option("--out-dir", ev_out, "Report directory")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "RTF benchmark");
  std::string be_ckpt, be_corpus, be_split = "test";
  size_t be_repeats = 5;
  bench->add_option("--checkpoint", be_ckpt, "Checkpoint file")->required();
  bench->add_option("--corpus", be_corpus, "Corpus directory")->required();
  bench->add_option("--split", be_split, "Corpus split");
  bench->add_option("--repeats", be_repeats, "Measured passes");

  // analyze-gates
  auto* gates = app.add_subcommand("analyze-gates",
                                   "Gating-weight correlation matrix");
  std::string ga_ckpt, ga_corpus, ga_split = "test",
              ga_site = "decoder_block_2", ga_out;
  uint64_t ga_seed = 1;
  gates->add_option("--checkpoint", ga_ckpt, "Checkpoint file")->required();
  gates->add_option("--corpus", ga_corpus, "Corpus directory")->required();
  gates->add_option("--split", ga_split, "Corpus split");
  gates->add_option("--site", ga_site, "MoA site id");
  gates->add_option("--seed", ga_seed, "Utterance selection seed");
  gates->add_option("--out", ga_out, "Output CSV")->required();

  // count-params
  auto* count = app.add_subcommand("count-params", "Parameter accounting");
  ModelSelection count_sel;
  count_sel.add_options(count);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_seed, per_group, utts, val_pg, test_pg,
                          ropts, force);
    if (train->parsed())
      return cmd_train(train_sel, train_cfg_path, train_corpus, train_out,
                       train_seed);
    if (synth->parsed())
      return cmd_synth(sy_ckpt, sy_corpus, sy_utt, sy_out, sy_gt, sy_cache);
    if (evalc->parsed()) return cmd_eval(ev_ckpt, ev_corpus, ev_split, ev_out);
    if (bench->parsed())
      return cmd_bench(be_ckpt, be_corpus, be_split, be_repeats);
    if (gates->parsed())
      return cmd_analyze_gates(ga_ckpt, ga_corpus, ga_split, ga_site, ga_seed,
                               ga_out);
    if (count->parsed()) return cmd_count_params(count_sel);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

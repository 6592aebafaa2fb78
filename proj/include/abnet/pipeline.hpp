// Copyright 2026 The abnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "abnet/checkpoint.hpp"
#include "abnet/config.hpp"
#include "abnet/data.hpp"
#include "abnet/decode.hpp"
#include "abnet/error.hpp"
#include "abnet/eval.hpp"
#include "abnet/model.hpp"
#include "abnet/train.hpp"
#include "abnet/vocab.hpp"

namespace abnet {

/// A failure inside one pipeline stage. what() starts with the stage name.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& detail)
      : Error("stage " + stage + ": " + detail), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// File layout of one run directory.
struct RunPaths {
  std::filesystem::path root;

  std::string data_dir() const { return (root / "data").string(); }
  std::string src_vocab() const { return (root / "src.vocab").string(); }
  std::string tgt_vocab() const { return (root / "tgt.vocab").string(); }
  std::string xbert() const { return (root / "xbert.ckpt").string(); }
  std::string ybert() const { return (root / "ybert.ckpt").string(); }
  std::string model() const { return (root / "model.ckpt").string(); }
  std::string xbert_metrics() const { return (root / "xbert.metrics.tsv").string(); }
  std::string ybert_metrics() const { return (root / "ybert.metrics.tsv").string(); }
  std::string metrics() const { return (root / "metrics.tsv").string(); }
  std::string hypotheses() const { return (root / "hypotheses.txt").string(); }
  std::string report_tsv() const { return (root / "report.tsv").string(); }
  std::string report_txt() const { return (root / "report.txt").string(); }
};

struct Vocabs {
  Vocabulary src;
  Vocabulary tgt;
};

inline Vocabs build_vocabs(const Dataset& ds, const ExperimentSpec& spec) {
  std::vector<std::string> src, tgt;
  for (const auto& [x, y] : ds.train) {
    src.push_back(x);
    tgt.push_back(y);
  }
  return {build_vocab(src, spec.src_vocab_size, spec.lowercase),
          build_vocab(tgt, spec.tgt_vocab_size, spec.lowercase)};
}

inline std::vector<SequencePair> encode_pairs(const std::vector<TextPair>& pairs, const Vocabs& v) {
  std::vector<SequencePair> out;
  out.reserve(pairs.size());
  for (const auto& [x, y] : pairs) out.push_back({encode(x, v.src), encode(y, v.tgt)});
  return out;
}

/// The run's model config with vocabulary sizes taken from the built vocabularies.
inline ModelConfig resolve_model(const ExperimentSpec& spec, const Vocabs& v) {
  ModelConfig c = spec.model;
  c.src_vocab = v.src.size();
  c.tgt_vocab = v.tgt.size();
  c.validate();
  return c;
}

/// Pre-trained stacks, reusable across runs that share data and backbone shape.
struct Backbones {
  std::optional<ParameterStore<float>> xbert;
  std::optional<ParameterStore<float>> ybert;
};

/// Fresh model with backbones copied in (unless training from scratch) and
/// partitions set for the mode.
inline ParameterStore<float> assemble_model(const ModelConfig& c, TrainMode mode, const Backbones& b) {
  ParameterStore<float> s = init_model<float>(c, c.seed);
  if (mode != TrainMode::train_scratch) {
    if (!b.xbert) throw ContractError("assemble_model: XBERT backbone missing");
    load_backbone(s, *b.xbert);
    if (c.dec_kind == DecoderKind::adapter_bert) {
      if (!b.ybert) throw ContractError("assemble_model: YBERT backbone missing");
      load_backbone(s, *b.ybert);
    }
  }
  apply_train_mode(s, mode);
  return s;
}

struct Evaluation {
  EvalReport report;
  std::vector<std::string> hypotheses;
  LatencyStats latency;
};

/// Decodes every test source at batch size 1 and scores against the references
/// on target token ids.
inline Evaluation evaluate_model(const ParameterStore<float>& s, const ModelConfig& c, const DecodeConfig& d,
                                 const std::vector<TextPair>& test, const Vocabs& v, std::string label) {
  d.validate();
  if (test.empty()) throw DataError("evaluate_model: empty test set");
  std::vector<std::vector<int>> sources, refs;
  for (const auto& [x, y] : test) {
    sources.push_back(encode(x, v.src));
    refs.push_back(encode(y, v.tgt));
  }
  Evaluation ev;
  ev.latency = measure_latency([&](std::span<const int> src) { return decode_source<float>(src, s, c, d); }, sources);
  std::vector<std::vector<int>> hyps;
  for (const auto& r : ev.latency.results) {
    hyps.push_back(r.tokens);
    ev.hypotheses.push_back(decode(r.tokens, v.tgt));
  }
  EvalReport& rep = ev.report;
  rep.label = std::move(label);
  rep.decode_mode = d.mode == DecodeMode::parallel ? "parallel" : "ar";
  rep.sentences = test.size();
  rep.bleu = corpus_bleu(hyps, refs);
  rep.exact_match = exact_match(hyps, refs);
  rep.latency_ms = ev.latency.mean_ms;
  rep.mean_iterations = ev.latency.mean_iterations;
  rep.mean_output_length = ev.latency.mean_output_length;
  rep.mean_decoder_calls = ev.latency.mean_decoder_calls;
  rep.max_decoder_calls = ev.latency.max_decoder_calls;
  rep.decoder_call_bound = d.mode == DecodeMode::parallel ? d.length_beam * d.max_iterations : c.max_tgt_len;
  const ParameterAudit audit = parameter_audit(s);
  rep.trainable_params = audit.trainable;
  rep.total_params = audit.total();
  return ev;
}

struct PipelineOptions {
  std::ostream* progress = nullptr;
  bool write_artifacts = true;
  Backbones* cache = nullptr;  // filled on first use, reused afterwards
  std::function<void(const std::string& stage, std::size_t epoch, double loss)> on_epoch;
};

struct PipelineResult {
  EvalReport report;
  ParameterAudit audit;
  TrainSummary finetune;
  std::vector<double> xbert_loss;
  std::vector<double> ybert_loss;
  std::vector<std::string> hypotheses;
  ModelConfig model;
};

namespace detail {

template <class F>
auto run_stage(const std::string& name, std::ostream* progress, F&& f) -> decltype(f()) {
  if (progress) *progress << "[" << name << "]" << std::endl;
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(name, e.what());
  }
}

class OptionalFile {
 public:
  OptionalFile(bool enabled, const std::string& path) {
    if (!enabled) return;
    file_.open(path, std::ios::trunc);
    if (!file_) throw DataError("cannot write " + path);
  }
  std::ostream* stream() { return file_.is_open() ? &file_ : nullptr; }

 private:
  std::ofstream file_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

}  // namespace detail

inline ParameterStore<float> pretrain_side(const std::vector<TextPair>& train, const std::string& side,
                                           const Vocabs& v, const ModelConfig& c, const TrainConfig& t,
                                           MetricsLog log = {}, const EpochCallback& on_epoch = {}) {
  std::vector<Sequence> corpus;
  for (const auto& [x, y] : train) corpus.push_back(side == "enc" ? encode(x, v.src) : encode(y, v.tgt));
  return pretrain_backbone<float>(corpus, side, c, t, log, on_epoch);
}

/// gen-data, build-vocab, pretrain XBERT, pretrain YBERT, assemble,
/// fine-tune, decode. Writes every artifact under spec.out_dir.
inline PipelineResult run_pipeline(const ExperimentSpec& spec, const PipelineOptions& opt = {}) {
  const RunPaths paths{spec.out_dir};
  std::ostream* progress = opt.progress;
  const bool files = opt.write_artifacts;
  PipelineResult result;

  detail::run_stage("config", progress, [&] {
    spec.validate();
    if (files) std::filesystem::create_directories(paths.root);
  });
  const Dataset ds = detail::run_stage("gen-data", progress, [&] {
    Dataset d = gen_synthetic(spec);
    if (files) write_dataset(d, paths.data_dir());
    return d;
  });
  const Vocabs vocabs = detail::run_stage("build-vocab", progress, [&] {
    Vocabs v = build_vocabs(ds, spec);
    if (files) {
      v.src.save(paths.src_vocab());
      v.tgt.save(paths.tgt_vocab());
    }
    return v;
  });
  const ModelConfig c = detail::run_stage("config", progress, [&] { return resolve_model(spec, vocabs); });
  result.model = c;

  Backbones local;
  Backbones& bb = opt.cache ? *opt.cache : local;
  const TrainMode mode = spec.train.mode;
  auto epoch_hook = [&](const std::string& stage, std::vector<double>* sink) -> EpochCallback {
    return [&opt, progress, stage, sink](std::size_t epoch, double loss) {
      if (sink) sink->push_back(loss);
      if (progress) *progress << "  " << stage << " epoch " << epoch << " loss " << format_real(loss) << std::endl;
      if (opt.on_epoch) opt.on_epoch(stage, epoch, loss);
    };
  };
  auto pretrain = [&](const std::string& stage, const std::string& side, std::optional<ParameterStore<float>>& slot,
                      const std::string& ckpt, const std::string& metrics, std::vector<double>* sink) {
    detail::run_stage(stage, progress, [&] {
      if (slot) return;
      detail::OptionalFile log(files, metrics);
      ModelConfig bc = c;
      bc.role = side == "enc" ? "xbert" : "ybert";
      slot = pretrain_side(ds.train, side, vocabs, bc, spec.train, MetricsLog(log.stream()), epoch_hook(stage, sink));
      if (files) save_checkpoint(*slot, bc, ckpt);
    });
  };
  if (mode != TrainMode::train_scratch) {
    pretrain("pretrain-xbert", "enc", bb.xbert, paths.xbert(), paths.xbert_metrics(), &result.xbert_loss);
    if (c.dec_kind == DecoderKind::adapter_bert) {
      pretrain("pretrain-ybert", "dec", bb.ybert, paths.ybert(), paths.ybert_metrics(), &result.ybert_loss);
    }
  }
  ParameterStore<float> model =
      detail::run_stage("assemble", progress, [&] { return assemble_model(c, mode, bb); });
  result.finetune = detail::run_stage("finetune", progress, [&] {
    detail::OptionalFile log(files, paths.metrics());
    TrainSummary summary =
        finetune(model, encode_pairs(ds.train, vocabs), c, spec.train, MetricsLog(log.stream()),
                 epoch_hook("finetune", nullptr));
    if (files) save_checkpoint(model, c, paths.model());
    return summary;
  });
  result.audit = parameter_audit(model);
  detail::run_stage("decode", progress, [&] {
    Evaluation ev = evaluate_model(model, c, spec.decode, ds.test, vocabs,
                                   to_string(spec.task) + "/" + to_string(c.dec_kind) + "/" + to_string(mode));
    result.report = ev.report;
    result.hypotheses = std::move(ev.hypotheses);
    if (files) {
      std::string hyp_text;
      for (const auto& h : result.hypotheses) hyp_text += h + '\n';
      detail::write_text(paths.hypotheses(), hyp_text);
      detail::write_text(paths.report_tsv(), EvalReport::tsv_header() + '\n' + result.report.tsv() + '\n');
      detail::write_text(paths.report_txt(), result.report.human());
    }
  });
  return result;
}

struct SweepRow {
  std::size_t d_aenc = 0;
  std::size_t encoder_adapter_params = 0;
  std::size_t trainable_params = 0;
  double final_loss = 0.0;
  double bleu = 0.0;
  double exact_match = 0.0;
};

inline std::size_t encoder_adapter_params(const ParameterAudit& a) {
  std::size_t n = 0;
  for (const auto& [module, count] : a.modules) {
    if (module.starts_with("enc.adapter")) n += count.trainable + count.frozen;
  }
  return n;
}

/// Runs the pipeline once per encoder-adapter width, sharing the pre-trained
/// backbones. Each run writes into out_dir/d_aenc_<width>.
inline std::vector<SweepRow> run_sweep(const ExperimentSpec& spec, PipelineOptions opt = {}) {
  if (spec.sweep_d_aenc.empty()) throw ConfigError("sweep_d_aenc is empty");
  Backbones shared;
  if (!opt.cache) opt.cache = &shared;
  std::vector<SweepRow> rows;
  for (const std::size_t width : spec.sweep_d_aenc) {
    ExperimentSpec one = spec;
    one.model.d_aenc = width;
    one.out_dir = (std::filesystem::path(spec.out_dir) / ("d_aenc_" + std::to_string(width))).string();
    if (opt.progress) *opt.progress << "== d_aenc " << width << std::endl;
    const PipelineResult r = run_pipeline(one, opt);
    SweepRow row;
    row.d_aenc = width;
    row.encoder_adapter_params = encoder_adapter_params(r.audit);
    row.trainable_params = r.audit.trainable;
    row.final_loss = r.finetune.epoch_loss.empty() ? 0.0 : r.finetune.epoch_loss.back();
    row.bleu = r.report.bleu.bleu;
    row.exact_match = r.report.exact_match;
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "d_aenc\tencoder_adapter_params\ttrainable_params\tfinal_loss\tbleu\texact_match\n";
  for (const auto& r : rows) {
    os << r.d_aenc << '\t' << r.encoder_adapter_params << '\t' << r.trainable_params << '\t'
       << format_real(r.final_loss) << '\t' << format_real(r.bleu) << '\t' << format_real(r.exact_match) << '\n';
  }
  return os.str();
}

}  // namespace abnet

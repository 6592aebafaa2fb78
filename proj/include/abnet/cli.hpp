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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "abnet/checkpoint.hpp"
#include "abnet/config.hpp"
#include "abnet/data.hpp"
#include "abnet/eval.hpp"
#include "abnet/pipeline.hpp"
#include "abnet/train.hpp"
#include "abnet/vocab.hpp"

namespace abnet {

namespace cli_detail {

/// Turns leftover "--key value" / "--key=value" arguments into config
/// overrides. Keys are checked later against the known-key registry.
inline ConfigMap parse_overrides(const std::vector<std::string>& args) {
  ConfigMap m;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (!a.starts_with("--") || a.size() == 2) throw ConfigError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    const std::size_t eq = body.find('=');
    if (eq != std::string::npos) {
      m.set(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw ConfigError("flag --" + body + " needs a value");
      m.set(body, args[++i]);
    }
  }
  m.require_known(ExperimentSpec::known_keys());
  return m;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
}

inline Vocabs load_vocabs(const RunPaths& p, const ExperimentSpec& spec) {
  return {Vocabulary::load(p.src_vocab(), spec.lowercase), Vocabulary::load(p.tgt_vocab(), spec.lowercase)};
}

inline void print_audit(std::ostream& out, const ParameterAudit& a) {
  out << "module\ttrainable\tfrozen\n";
  for (const auto& [m, n] : a.modules) out << m << '\t' << n.trainable << '\t' << n.frozen << '\n';
  out << "total\t" << a.trainable << '\t' << a.frozen << '\n'
      << "trainable ratio " << format_real(a.ratio) << '\n';
}

}  // namespace cli_detail

/// Entry point for the abnet tool. Returns the process exit status; errors
/// print one diagnostic line to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Adapter-based BERT sequence-to-sequence toolkit", "abnet"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "key = value configuration file");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset into <out_dir>/data");
  auto* vocab = app.add_subcommand("build-vocab", "build source and target vocabularies from the training split");
  auto* pre = app.add_subcommand("pretrain", "MLM pre-training of XBERT and/or YBERT");
  auto* fine = app.add_subcommand("finetune", "assemble and fine-tune the sequence-to-sequence model");
  auto* dec = app.add_subcommand("decode", "decode the test split and write an evaluation report");
  auto* score = app.add_subcommand("score", "corpus BLEU and exact match of a hypothesis file");
  auto* audit = app.add_subcommand("audit", "trainable/frozen parameter counts of a checkpoint");
  auto* pipe = app.add_subcommand("pipeline", "run every stage end to end");
  auto* sweep = app.add_subcommand("sweep", "pipeline over the encoder-adapter widths in sweep_d_aenc");

  std::string side = "both", mode, checkpoint, hyp_path, ref_path;
  pre->add_option("--side", side, "enc, dec or both")->check(CLI::IsMember({"enc", "dec", "both"}));
  fine->add_option("--mode", mode, "training mode (train_mode)");
  dec->add_option("--mode", mode, "decoding mode (decode_mode): parallel or ar");
  dec->add_option("--checkpoint", checkpoint, "model checkpoint (default <out_dir>/model.ckpt)");
  audit->add_option("--checkpoint", checkpoint, "checkpoint (default <out_dir>/model.ckpt)");
  score->add_option("--hyp", hyp_path, "hypotheses, one per line")->required();
  score->add_option("--ref", ref_path, "references, one per line or source<TAB>target")->required();
  for (auto* sub : {gen, vocab, pre, fine, dec, score, audit, pipe, sweep}) {
    sub->allow_extras();
    sub->add_option("-c,--config", config_path, "key = value configuration file");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "abnet: error: " << e.what() << '\n';
    return 2;
  }
  CLI::App* sub = app.get_subcommands().front();

  try {
    ConfigMap cfg;
    if (!config_path.empty()) cfg = ConfigMap::load(config_path);
    cfg.merge(cli_detail::parse_overrides(sub->remaining()));
    if (!mode.empty()) cfg.set(sub == dec ? "decode_mode" : "train_mode", mode);
    const ExperimentSpec spec = ExperimentSpec::from_config(cfg);
    const RunPaths paths{spec.out_dir};
    const std::string name = sub->get_name();

    if (sub == gen) {
      std::filesystem::create_directories(paths.root);
      const Dataset ds = gen_synthetic(spec);
      write_dataset(ds, paths.data_dir());
      out << "wrote " << ds.train.size() << "/" << ds.valid.size() << "/" << ds.test.size()
          << " train/valid/test pairs to " << paths.data_dir() << '\n';
    } else if (sub == vocab) {
      const Vocabs v = build_vocabs(read_dataset(paths.data_dir()), spec);
      v.src.save(paths.src_vocab());
      v.tgt.save(paths.tgt_vocab());
      out << "source vocabulary " << v.src.size() << ", target vocabulary " << v.tgt.size() << '\n';
    } else if (sub == pre) {
      const Dataset ds = read_dataset(paths.data_dir());
      const Vocabs v = cli_detail::load_vocabs(paths, spec);
      const ModelConfig c = resolve_model(spec, v);
      for (const std::string s : {"enc", "dec"}) {
        if (side != "both" && side != s) continue;
        ModelConfig bc = c;
        bc.role = s == "enc" ? "xbert" : "ybert";
        std::ofstream log(s == "enc" ? paths.xbert_metrics() : paths.ybert_metrics(), std::ios::trunc);
        const auto store = pretrain_side(ds.train, s, v, bc, spec.train, MetricsLog(&log),
                                         [&](std::size_t e, double l) {
                                           out << bc.role << " epoch " << e << " loss " << format_real(l) << '\n';
                                         });
        save_checkpoint(store, bc, s == "enc" ? paths.xbert() : paths.ybert());
      }
    } else if (sub == fine) {
      const Dataset ds = read_dataset(paths.data_dir());
      const Vocabs v = cli_detail::load_vocabs(paths, spec);
      const ModelConfig c = resolve_model(spec, v);
      Backbones bb;
      if (spec.train.mode != TrainMode::train_scratch) {
        bb.xbert = load_checkpoint(paths.xbert()).params;
        if (c.dec_kind == DecoderKind::adapter_bert) bb.ybert = load_checkpoint(paths.ybert()).params;
      }
      ParameterStore<float> model = assemble_model(c, spec.train.mode, bb);
      std::ofstream log(paths.metrics(), std::ios::trunc);
      finetune(model, encode_pairs(ds.train, v), c, spec.train, MetricsLog(&log), [&](std::size_t e, double l) {
        out << "finetune epoch " << e << " loss " << format_real(l) << '\n';
      });
      save_checkpoint(model, c, checkpoint.empty() ? paths.model() : checkpoint);
    } else if (sub == dec) {
      const Dataset ds = read_dataset(paths.data_dir());
      const Vocabs v = cli_detail::load_vocabs(paths, spec);
      const Checkpoint ck = load_checkpoint(checkpoint.empty() ? paths.model() : checkpoint);
      const Evaluation ev = evaluate_model(ck.params, ck.config, spec.decode, ds.test, v,
                                           to_string(spec.task) + "/" + to_string(ck.config.dec_kind));
      cli_detail::write_lines(paths.hypotheses(), ev.hypotheses);
      cli_detail::write_lines(paths.report_tsv(), {EvalReport::tsv_header(), ev.report.tsv()});
      detail::write_text(paths.report_txt(), ev.report.human());
      out << ev.report.human();
    } else if (sub == score) {
      const auto hyps = cli_detail::read_lines(hyp_path);
      auto refs = cli_detail::read_lines(ref_path);
      for (auto& r : refs) {
        const std::size_t tab = r.find('\t');
        if (tab != std::string::npos) r = r.substr(tab + 1);
      }
      const BleuScore b = corpus_bleu_text(hyps, refs);
      std::vector<std::vector<std::string>> h, r;
      for (const auto& l : hyps) h.push_back(text::split_whitespace(l));
      for (const auto& l : refs) r.push_back(text::split_whitespace(l));
      out << "BLEU " << format_real(b.bleu) << "\tp1..p4";
      for (const double p : b.precision) out << ' ' << format_real(p);
      out << "\tBP " << format_real(b.brevity_penalty) << "\texact_match " << format_real(exact_match(h, r))
          << '\n';
    } else if (sub == audit) {
      const Checkpoint ck = load_checkpoint(checkpoint.empty() ? paths.model() : checkpoint);
      cli_detail::print_audit(out, parameter_audit(ck.params));
    } else if (sub == pipe) {
      PipelineOptions opt;
      opt.progress = &out;
      const PipelineResult r = run_pipeline(spec, opt);
      out << r.report.human();
    } else if (sub == sweep) {
      PipelineOptions opt;
      opt.progress = &out;
      const std::string table = format_sweep(run_sweep(spec, opt));
      detail::write_text((std::filesystem::path(spec.out_dir) / "sweep.tsv").string(), table);
      out << table;
    } else {
      throw ContractError("unhandled subcommand " + name);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    err << "abnet: error: " << msg << '\n';
    return 1;
  }
  return 0;
}

}  // namespace abnet

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

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "abnet/cli.hpp"
#include "abnet/config.hpp"
#include "abnet/data.hpp"
#include "abnet/pipeline.hpp"

namespace abnet {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> words(const std::string& s) { return text::split_whitespace(s); }

ExperimentSpec small_spec(Task task) {
  ExperimentSpec s;
  s.task = task;
  s.n_symbols = 8;
  s.min_len = 2;
  s.max_len = 6;
  s.train_size = 300;
  s.valid_size = 20;
  s.test_size = 40;
  return s;
}

// Tiny end-to-end setup that trains in well under a second per stage.
ExperimentSpec tiny_pipeline_spec(const fs::path& dir) {
  ExperimentSpec s = small_spec(Task::reverse);
  s.train_size = 64;
  s.test_size = 8;
  s.valid_size = 4;
  s.src_vocab_size = 16;
  s.tgt_vocab_size = 16;
  s.out_dir = dir.string();
  s.model.d_hidden = 16;
  s.model.n_heads = 2;
  s.model.enc_layers = 2;
  s.model.dec_layers = 2;
  s.model.d_ffn = 16;
  s.model.d_aenc = 4;
  s.model.d_adec_ffn = 16;
  s.model.enc_adapters = {1, 2};
  s.model.dec_adapters = {2};
  s.model.max_src_len = 8;
  s.model.max_tgt_len = 8;
  s.train.epochs = 1;
  s.train.pretrain_epochs = 1;
  s.train.batch_size = 16;
  s.decode.max_iterations = 3;
  s.decode.length_beam = 2;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("abnet_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(GenSynthetic, CopyPairsAreIdentical) {
  const Dataset ds = gen_synthetic(small_spec(Task::copy));
  ASSERT_EQ(ds.train.size(), 300u);
  for (const auto& [x, y] : ds.train) EXPECT_EQ(x, y);
}

TEST(GenSynthetic, ReversePairsAreReversed) {
  const Dataset ds = gen_synthetic(small_spec(Task::reverse));
  for (const auto& [x, y] : ds.test) {
    auto w = words(x);
    std::reverse(w.begin(), w.end());
    EXPECT_EQ(w, words(y));
  }
}

TEST(GenSynthetic, LengthsAndAlphabetRespectSpec) {
  const ExperimentSpec spec = small_spec(Task::reverse);
  const Dataset ds = gen_synthetic(spec);
  const auto alphabet = symbol_alphabet(spec.n_symbols);
  const std::set<std::string> allowed(alphabet.begin(), alphabet.end());
  for (const auto& [x, y] : ds.train) {
    const auto w = words(x);
    EXPECT_GE(w.size(), spec.min_len);
    EXPECT_LE(w.size(), spec.max_len);
    for (const auto& t : w) EXPECT_TRUE(allowed.count(t)) << t;
  }
}

// Independent replay of the written lexicon file: pair swaps apply left to right.
TEST(GenSynthetic, LexiconFileReplaysEveryTarget) {
  const fs::path dir = scratch_dir("lexicon");
  const Dataset ds = gen_synthetic(small_spec(Task::lexicon_translate));
  write_dataset(ds, dir.string());
  std::ifstream in(dir / "lexicon.tsv");
  std::map<std::string, std::pair<std::string, bool>> table;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string s, t, flag;
    std::getline(ss, s, '\t');
    std::getline(ss, t, '\t');
    std::getline(ss, flag, '\t');
    table[s] = {t, flag == "1"};
  }
  ASSERT_EQ(table.size(), 8u);
  std::set<std::string> image;
  for (const auto& [s, tf] : table) image.insert(tf.first);
  EXPECT_EQ(image.size(), table.size());
  bool saw_swap = false;
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    for (const auto& [x, y] : *split) {
      const auto w = words(x);
      std::vector<std::string> expect;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (table.at(w[i]).second && i + 1 < w.size()) {
          expect.push_back(table.at(w[i + 1]).first);
          expect.push_back(table.at(w[i]).first);
          ++i;
          saw_swap = true;
        } else {
          expect.push_back(table.at(w[i]).first);
        }
      }
      EXPECT_EQ(expect, words(y)) << x;
    }
  }
  EXPECT_TRUE(saw_swap);
  fs::remove_all(dir);
}

TEST(GenSynthetic, PureInSpecAndSeed) {
  const ExperimentSpec spec = small_spec(Task::lexicon_translate);
  const Dataset a = gen_synthetic(spec);
  const Dataset b = gen_synthetic(spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  ExperimentSpec other = spec;
  other.data_seed = 2;
  EXPECT_NE(gen_synthetic(other).train, a.train);
}

TEST(GenSynthetic, SplitsAreDisjoint) {
  const Dataset ds = gen_synthetic(small_spec(Task::reverse));
  std::set<std::string> train;
  for (const auto& p : ds.train) EXPECT_TRUE(train.insert(p.first).second);
  for (const auto& p : ds.test) EXPECT_FALSE(train.count(p.first)) << p.first;
  for (const auto& p : ds.valid) EXPECT_FALSE(train.count(p.first)) << p.first;
}

TEST(GenSynthetic, LengthRangeBeyondModelLimitIsConfigError) {
  ExperimentSpec spec = small_spec(Task::reverse);
  spec.max_len = spec.model.max_tgt_len + 1;
  EXPECT_THROW(gen_synthetic(spec), ConfigError);
  spec = small_spec(Task::reverse);
  spec.model.dec_kind = DecoderKind::transformer_ar;
  spec.model.dec_adapters.clear();
  spec.max_len = spec.model.max_tgt_len;
  EXPECT_THROW(gen_synthetic(spec), ConfigError);
}

TEST(Dataset, FilesRoundtrip) {
  const fs::path dir = scratch_dir("dataset");
  const Dataset ds = gen_synthetic(small_spec(Task::lexicon_translate));
  write_dataset(ds, dir.string());
  const Dataset back = read_dataset(dir.string());
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.valid, ds.valid);
  EXPECT_EQ(back.test, ds.test);
  ASSERT_EQ(back.lexicon.entries.size(), ds.lexicon.entries.size());
  EXPECT_EQ(back.lexicon.apply(ds.test[0].first), ds.test[0].second);
  fs::remove_all(dir);
}

TEST(ConfigFile, ParsesCommentsAndOverrides) {
  const auto m = ConfigMap::parse("# run\n task = copy \n\nepochs=3\nepochs = 4\ndec_adapters = top:1\n");
  const ExperimentSpec s = ExperimentSpec::from_config(m);
  EXPECT_EQ(s.task, Task::copy);
  EXPECT_EQ(s.train.epochs, 4u);
  EXPECT_EQ(s.model.dec_adapters, (std::vector<std::size_t>{4}));
}

TEST(ConfigFile, UnknownKeyIsNamed) {
  try {
    ExperimentSpec::from_config(ConfigMap::parse("epochz = 3\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epochz"), std::string::npos);
  }
}

TEST(ConfigFile, MalformedLineReportsLineNumber) {
  try {
    ConfigMap::parse("a = 1\nnot a pair\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos);
  }
}

TEST(ConfigFile, DecodeFlagsResolveToStandardDefaults) {
  const ExperimentSpec par =
      ExperimentSpec::from_config(cli_detail::parse_overrides({"--decode_mode", "parallel", "--T", "10", "--B", "4"}));
  EXPECT_EQ(par.decode.mode, DecodeMode::parallel);
  EXPECT_EQ(par.decode.max_iterations, 10u);
  EXPECT_EQ(par.decode.length_beam, 4u);
  const ExperimentSpec ar = ExperimentSpec::from_config(cli_detail::parse_overrides({"--decode_mode=ar", "--beam=5"}));
  EXPECT_EQ(ar.decode.mode, DecodeMode::autoregressive);
  EXPECT_EQ(ar.decode.beam_width, 5u);
  const ExperimentSpec defaults = ExperimentSpec::from_config(ConfigMap{});
  EXPECT_EQ(defaults.decode.max_iterations, 10u);
  EXPECT_EQ(defaults.decode.length_beam, 4u);
  EXPECT_EQ(defaults.decode.beam_width, 5u);
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "abnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

TEST(Cli, MissingConfigFileFails) {
  std::string err;
  EXPECT_NE(cli({"decode", "--config", "/nonexistent/run.cfg"}, nullptr, &err), 0);
  EXPECT_NE(err.find("/nonexistent/run.cfg"), std::string::npos);
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1);
}

TEST(Cli, UnknownFlagAndSubcommandFail) {
  std::string err;
  EXPECT_NE(cli({"gen-data", "--epochz", "3"}, nullptr, &err), 0);
  EXPECT_NE(err.find("epochz"), std::string::npos);
  EXPECT_NE(cli({"frobnicate"}, nullptr, &err), 0);
  EXPECT_NE(cli({}, nullptr, &err), 0);
}

TEST(Cli, StagesRunEndToEnd) {
  const fs::path dir = scratch_dir("cli");
  fs::create_directories(dir);
  const ExperimentSpec s = tiny_pipeline_spec(dir);
  const std::string cfg = (dir / "run.cfg").string();
  {
    std::ofstream f(cfg);
    f << "out_dir = " << dir.string() << "\nn_symbols = 8\nmin_len = 2\nmax_len = 6\ntrain_size = 64\n"
      << "valid_size = 4\ntest_size = 8\nsrc_vocab_size = 16\ntgt_vocab_size = 16\nd_hidden = 16\n"
      << "n_heads = 2\nenc_layers = 2\ndec_layers = 2\nd_ffn = 16\nd_aenc = 4\nd_adec_ffn = 16\n"
      << "enc_adapters = all\ndec_adapters = 2\nmax_src_len = 8\nmax_tgt_len = 8\nepochs = 1\n"
      << "pretrain_epochs = 1\nbatch_size = 16\n";
  }
  std::string out, err;
  ASSERT_EQ(cli({"gen-data", "--config", cfg}, &out, &err), 0) << err;
  ASSERT_EQ(cli({"build-vocab", "--config", cfg}, &out, &err), 0) << err;
  ASSERT_EQ(cli({"pretrain", "--config", cfg}, &out, &err), 0) << err;
  EXPECT_TRUE(fs::exists(dir / "xbert.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "ybert.ckpt"));
  ASSERT_EQ(cli({"finetune", "--config", cfg, "--mode", "finetune-adapters"}, &out, &err), 0) << err;
  ASSERT_EQ(cli({"decode", "--config", cfg, "--mode", "parallel", "--T", "3", "--B", "2"}, &out, &err), 0) << err;
  EXPECT_NE(out.find("BLEU"), std::string::npos);
  EXPECT_EQ(cli({"decode", "--config", cfg, "--mode", "ar"}, &out, &err), 1);
  ASSERT_EQ(cli({"audit", "--config", cfg}, &out, &err), 0) << err;
  EXPECT_NE(out.find("enc.adapter1"), std::string::npos);
  const std::string refs = (dir / "data" / "test.tsv").string();
  ASSERT_EQ(cli({"score", "--config", cfg, "--hyp", (dir / "hypotheses.txt").string(), "--ref", refs}, &out, &err),
            0)
      << err;
  EXPECT_EQ(out.rfind("BLEU", 0), 0u);
  ASSERT_EQ(cli({"score", "--hyp", refs, "--ref", refs}, &out, &err), 0) << err;
  fs::remove_all(dir);
}

TEST(Pipeline, BitReproducibleUnderFixedSeed) {
  const fs::path a = scratch_dir("pipe_a"), b = scratch_dir("pipe_b");
  const PipelineResult ra = run_pipeline(tiny_pipeline_spec(a));
  const PipelineResult rb = run_pipeline(tiny_pipeline_spec(b));
  EXPECT_EQ(ra.report.tsv_without_timing(), rb.report.tsv_without_timing());
  for (const std::string f : {"xbert.ckpt", "ybert.ckpt", "model.ckpt", "hypotheses.txt", "src.vocab", "tgt.vocab"}) {
    EXPECT_EQ(slurp((a / f).string()), slurp((b / f).string())) << f;
  }
  EXPECT_EQ(slurp((a / "data" / "train.tsv").string()), slurp((b / "data" / "train.tsv").string()));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, ReportsDecoderCallsForBothDecoders) {
  const fs::path dir = scratch_dir("pipe_calls");
  ExperimentSpec s = tiny_pipeline_spec(dir);
  const PipelineResult par = run_pipeline(s);
  EXPECT_LE(par.report.max_decoder_calls, s.decode.length_beam * s.decode.max_iterations);
  EXPECT_EQ(par.report.decoder_call_bound, s.decode.length_beam * s.decode.max_iterations);
  s.model.dec_kind = DecoderKind::transformer_ar;
  s.model.dec_adapters.clear();
  s.max_len = 6;
  s.decode.mode = DecodeMode::autoregressive;
  s.decode.beam_width = 1;
  const PipelineResult ar = run_pipeline(s);
  EXPECT_EQ(ar.report.decode_mode, "ar");
  EXPECT_TRUE(ar.ybert_loss.empty());
  EXPECT_GT(ar.report.mean_decoder_calls, 0.0);
  fs::remove_all(dir);
}

TEST(Pipeline, StageFailureNamesTheStage) {
  const fs::path dir = scratch_dir("pipe_fail");
  ExperimentSpec s = tiny_pipeline_spec(dir);
  s.train.lr = 1e30;
  try {
    run_pipeline(s);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "pretrain-xbert");
    EXPECT_EQ(std::string(e.what()).rfind("stage pretrain-xbert", 0), 0u);
  }
  fs::remove_all(dir);
}

TEST(Pipeline, ScratchModeSkipsBackbones) {
  const fs::path dir = scratch_dir("pipe_scratch");
  ExperimentSpec s = tiny_pipeline_spec(dir);
  s.train.mode = TrainMode::train_scratch;
  const PipelineResult r = run_pipeline(s);
  EXPECT_TRUE(r.xbert_loss.empty());
  EXPECT_FALSE(fs::exists(dir / "xbert.ckpt"));
  EXPECT_EQ(r.audit.frozen, 0u);
  fs::remove_all(dir);
}

TEST(Pipeline, AdapterPlacementsCompleteAndReportBleu) {
  const fs::path dir = scratch_dir("pipe_place");
  ExperimentSpec s = tiny_pipeline_spec(dir);
  Backbones cache;
  PipelineOptions opt;
  opt.cache = &cache;
  std::vector<PipelineResult> runs;
  for (const std::string set : {"top:1", "all"}) {
    s.model.enc_adapters = parse_layer_set(set, s.model.enc_layers);
    s.model.dec_adapters = parse_layer_set(set, s.model.dec_layers);
    runs.push_back(run_pipeline(s, opt));
    EXPECT_GE(runs.back().report.bleu.bleu, 0.0);
    EXPECT_LE(runs.back().report.bleu.bleu, 100.0);
  }
  EXPECT_LT(runs[0].audit.trainable, runs[1].audit.trainable);
  EXPECT_EQ(runs[0].audit.frozen, runs[1].audit.frozen);
  fs::remove_all(dir);
}

TEST(Sweep, TrainableCountsAreMonotone) {
  const fs::path dir = scratch_dir("sweep");
  ExperimentSpec s = tiny_pipeline_spec(dir);
  s.sweep_d_aenc = {2, 4, 8};
  const auto rows = run_sweep(s);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t per_layer = 2 * s.model.d_hidden * rows[i].d_aenc + rows[i].d_aenc + s.model.d_hidden;
    EXPECT_EQ(rows[i].encoder_adapter_params, per_layer * s.model.enc_adapters.size());
    if (i) {
      EXPECT_GE(rows[i].trainable_params, rows[i - 1].trainable_params);
    }
  }
  const std::string table = format_sweep(rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace abnet

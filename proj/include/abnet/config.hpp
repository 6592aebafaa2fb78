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

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "abnet/error.hpp"

namespace abnet {

/// Flat `key = value` settings. Blank lines and lines starting with '#' are
/// skipped. Later assignments override earlier ones.
class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text, std::string_view origin = "config") {
    ConfigMap map;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      line = trim(line);
      if (line.empty() || line.front() == '#') continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                          ": expected 'key = value'");
      }
      const std::string key(trim(line.substr(0, eq)));
      if (key.empty()) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
      }
      map.set(key, std::string(trim(line.substr(eq + 1))));
    }
    return map;
  }

  static ConfigMap load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  void merge(const ConfigMap& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <class Int>
  Int get_int(const std::string& key, Int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    Int out{};
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
    }
    return out;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
  }

  // Throws naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Parses "all", "none", "top:K", "1-4", or "1,3,4" into sorted 1-based
/// layer indices bounded by `layers`.
inline std::vector<std::size_t> parse_layer_set(const std::string& spec, std::size_t layers) {
  std::set<std::size_t> out;
  const std::string s(ConfigMap::trim(spec));
  auto fail = [&] { throw ConfigError("invalid layer set '" + spec + "'"); };
  auto number = [&](std::string_view v) {
    v = ConfigMap::trim(v);
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || ptr != v.data() + v.size()) fail();
    return n;
  };
  if (s == "all") {
    for (std::size_t i = 1; i <= layers; ++i) out.insert(i);
  } else if (s == "none" || s.empty()) {
  } else if (s.starts_with("top:")) {
    const std::size_t k = number(std::string_view(s).substr(4));
    if (k > layers) fail();
    for (std::size_t i = layers - k + 1; i <= layers; ++i) out.insert(i);
  } else {
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
      const auto dash = part.find('-');
      if (dash == std::string::npos) {
        out.insert(number(part));
      } else {
        const std::size_t lo = number(std::string_view(part).substr(0, dash));
        const std::size_t hi = number(std::string_view(part).substr(dash + 1));
        if (lo > hi) fail();
        for (std::size_t i = lo; i <= hi; ++i) out.insert(i);
      }
    }
  }
  for (const std::size_t i : out) {
    if (i < 1 || i > layers) {
      throw ConfigError("adapter layer " + std::to_string(i) + " outside 1.." +
                        std::to_string(layers));
    }
  }
  return {out.begin(), out.end()};
}

inline std::string format_layer_set(const std::vector<std::size_t>& layers) {
  if (layers.empty()) return "none";
  std::string out;
  for (const std::size_t i : layers) {
    if (!out.empty()) out += ',';
    out += std::to_string(i);
  }
  return out;
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

enum class DecoderMask { bidirectional, causal };
enum class DecoderKind { adapter_bert, transformer_ar };

inline std::string to_string(DecoderMask m) {
  return m == DecoderMask::causal ? "causal" : "bidirectional";
}
inline std::string to_string(DecoderKind k) {
  return k == DecoderKind::transformer_ar ? "transformer-ar" : "adapter-bert";
}

/// Architecture of the assembled sequence-to-sequence model. Also describes
/// a single pre-training backbone (role xbert/ybert), in which case only the
/// side it covers is meaningful.
struct ModelConfig {
  std::string role = "abnet";  // abnet | xbert | ybert
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t d_hidden = 64;
  std::size_t n_heads = 4;
  std::size_t enc_layers = 4;
  std::size_t dec_layers = 4;
  std::size_t d_ffn = 128;
  std::size_t d_aenc = 32;
  std::size_t d_adec_ffn = 8;
  std::vector<std::size_t> enc_adapters{1, 2, 3, 4};
  std::vector<std::size_t> dec_adapters{1, 2, 3, 4};
  std::size_t max_src_len = 24;
  std::size_t max_tgt_len = 24;
  DecoderMask dec_mask = DecoderMask::bidirectional;
  DecoderKind dec_kind = DecoderKind::adapter_bert;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  std::size_t head_dim() const { return d_hidden / n_heads; }
  // Source positions include the leading [LENGTH] slot.
  std::size_t src_positions() const { return max_src_len + 1; }
  std::size_t tgt_positions() const { return max_tgt_len; }
  bool autoregressive() const {
    return dec_kind == DecoderKind::transformer_ar || dec_mask == DecoderMask::causal;
  }

  void validate() const {
    if (d_hidden == 0 || n_heads == 0 || d_hidden % n_heads != 0) {
      throw ConfigError("d_hidden " + std::to_string(d_hidden) +
                        " must be a positive multiple of n_heads " + std::to_string(n_heads));
    }
    if (d_ffn == 0 || d_aenc == 0 || d_adec_ffn == 0) {
      throw ConfigError("feed-forward widths must be positive");
    }
    auto check_set = [](const std::vector<std::size_t>& set, std::size_t layers, const char* what) {
      for (const std::size_t i : set) {
        if (i < 1 || i > layers) {
          throw ConfigError(std::string(what) + " adapter layer " + std::to_string(i) +
                            " outside 1.." + std::to_string(layers));
        }
      }
    };
    check_set(enc_adapters, enc_layers, "encoder");
    check_set(dec_adapters, dec_layers, "decoder");
    if (max_tgt_len == 0 || max_src_len == 0) throw ConfigError("maximum lengths must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  }

  static ModelConfig from_config(const ConfigMap& c) {
    ModelConfig m;
    m.role = c.get_string("role", m.role);
    m.src_vocab = c.get_int<std::size_t>("src_vocab", m.src_vocab);
    m.tgt_vocab = c.get_int<std::size_t>("tgt_vocab", m.tgt_vocab);
    m.d_hidden = c.get_int<std::size_t>("d_hidden", m.d_hidden);
    m.n_heads = c.get_int<std::size_t>("n_heads", m.n_heads);
    m.enc_layers = c.get_int<std::size_t>("enc_layers", m.enc_layers);
    m.dec_layers = c.get_int<std::size_t>("dec_layers", m.dec_layers);
    m.d_ffn = c.get_int<std::size_t>("d_ffn", m.d_ffn);
    m.d_aenc = c.get_int<std::size_t>("d_aenc", m.d_aenc);
    m.d_adec_ffn = c.get_int<std::size_t>("d_adec_ffn", m.d_adec_ffn);
    if (c.has("d_adec") && c.get_int<std::size_t>("d_adec", 0) != m.d_hidden) {
      throw ConfigError("d_adec must equal d_hidden");
    }
    m.enc_adapters = parse_layer_set(c.get_string("enc_adapters", "all"), m.enc_layers);
    m.dec_adapters = parse_layer_set(c.get_string("dec_adapters", "all"), m.dec_layers);
    m.max_src_len = c.get_int<std::size_t>("max_src_len", m.max_src_len);
    m.max_tgt_len = c.get_int<std::size_t>("max_tgt_len", m.max_tgt_len);
    const std::string mask = c.get_string("dec_mask", "bidirectional");
    if (mask == "bidirectional") m.dec_mask = DecoderMask::bidirectional;
    else if (mask == "causal") m.dec_mask = DecoderMask::causal;
    else throw ConfigError("dec_mask must be bidirectional or causal, got '" + mask + "'");
    const std::string kind = c.get_string("dec_kind", "adapter-bert");
    if (kind == "adapter-bert") m.dec_kind = DecoderKind::adapter_bert;
    else if (kind == "transformer-ar") m.dec_kind = DecoderKind::transformer_ar;
    else throw ConfigError("dec_kind must be adapter-bert or transformer-ar, got '" + kind + "'");
    m.dropout = c.get_double("dropout", m.dropout);
    m.seed = c.get_int<std::uint64_t>("model_seed", m.seed);
    m.validate();
    return m;
  }

  /// Canonical text form, stored in checkpoints.
  std::string to_text() const {
    std::ostringstream os;
    os << "role = " << role << '\n'
       << "src_vocab = " << src_vocab << '\n'
       << "tgt_vocab = " << tgt_vocab << '\n'
       << "d_hidden = " << d_hidden << '\n'
       << "n_heads = " << n_heads << '\n'
       << "enc_layers = " << enc_layers << '\n'
       << "dec_layers = " << dec_layers << '\n'
       << "d_ffn = " << d_ffn << '\n'
       << "d_aenc = " << d_aenc << '\n'
       << "d_adec_ffn = " << d_adec_ffn << '\n'
       << "enc_adapters = " << format_layer_set(enc_adapters) << '\n'
       << "dec_adapters = " << format_layer_set(dec_adapters) << '\n'
       << "max_src_len = " << max_src_len << '\n'
       << "max_tgt_len = " << max_tgt_len << '\n'
       << "dec_mask = " << to_string(dec_mask) << '\n'
       << "dec_kind = " << to_string(dec_kind) << '\n'
       << "dropout = " << format_real(dropout) << '\n'
       << "model_seed = " << seed << '\n';
    return os.str();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class TrainMode { pretrain_mlm, finetune_adapters, finetune_full, train_scratch };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::pretrain_mlm: return "pretrain-mlm";
    case TrainMode::finetune_adapters: return "finetune-adapters";
    case TrainMode::finetune_full: return "finetune-full";
    case TrainMode::train_scratch: return "train-scratch";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "pretrain-mlm") return TrainMode::pretrain_mlm;
  if (s == "finetune-adapters") return TrainMode::finetune_adapters;
  if (s == "finetune-full") return TrainMode::finetune_full;
  if (s == "train-scratch") return TrainMode::train_scratch;
  throw ConfigError("unknown train_mode '" + s + "'");
}

struct TrainConfig {
  TrainMode mode = TrainMode::finetune_adapters;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t pretrain_epochs = 5;
  double pretrain_lr = 0.0;  // 0: same as lr
  double mlm_fraction = 0.15;
  double length_weight = 1.0;
  bool lr_decay = false;  // fine-tuning lr falls linearly to 0 over the run
  std::uint64_t seed = 1;

  void validate() const {
    if (!(mlm_fraction > 0.0 && mlm_fraction < 1.0)) {
      throw ConfigError("mlm_fraction must be in (0, 1)");
    }
    if (length_weight < 0.0) throw ConfigError("length_weight must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(pretrain_lr >= 0.0)) throw ConfigError("pretrain_lr must be non-negative");
  }

  static TrainConfig from_config(const ConfigMap& c) {
    TrainConfig t;
    t.mode = parse_train_mode(c.get_string("train_mode", to_string(t.mode)));
    t.lr = c.get_double("lr", t.lr);
    t.beta1 = c.get_double("beta1", t.beta1);
    t.beta2 = c.get_double("beta2", t.beta2);
    t.adam_eps = c.get_double("adam_eps", t.adam_eps);
    t.batch_size = c.get_int<std::size_t>("batch_size", t.batch_size);
    t.epochs = c.get_int<std::size_t>("epochs", t.epochs);
    t.pretrain_epochs = c.get_int<std::size_t>("pretrain_epochs", t.pretrain_epochs);
    t.pretrain_lr = c.get_double("pretrain_lr", t.pretrain_lr);
    t.mlm_fraction = c.get_double("mlm_fraction", t.mlm_fraction);
    t.length_weight = c.get_double("length_weight", t.length_weight);
    t.lr_decay = c.get_bool("lr_decay", t.lr_decay);
    t.seed = c.get_int<std::uint64_t>("train_seed", t.seed);
    t.validate();
    return t;
  }
};

enum class DecodeMode { parallel, autoregressive };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::parallel;
  std::size_t max_iterations = 10;  // T
  std::size_t length_beam = 4;      // B
  std::size_t beam_width = 5;
  bool length_score = true;  // add log P(L | x) to Mask-Predict candidate scores

  void validate() const {
    if (max_iterations < 1) throw ConfigError("T must be at least 1");
    if (length_beam < 1) throw ConfigError("B must be at least 1");
    if (beam_width < 1) throw ConfigError("beam must be at least 1");
  }

  static DecodeConfig from_config(const ConfigMap& c) {
    DecodeConfig d;
    const std::string mode = c.get_string("decode_mode", "parallel");
    if (mode == "parallel") d.mode = DecodeMode::parallel;
    else if (mode == "ar") d.mode = DecodeMode::autoregressive;
    else throw ConfigError("decode_mode must be parallel or ar, got '" + mode + "'");
    d.max_iterations = c.get_int<std::size_t>("T", d.max_iterations);
    d.length_beam = c.get_int<std::size_t>("B", d.length_beam);
    d.beam_width = c.get_int<std::size_t>("beam", d.beam_width);
    d.length_score = c.get_bool("length_score", d.length_score);
    d.validate();
    return d;
  }
};

enum class Task { copy, reverse, lexicon_translate };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::copy: return "copy";
    case Task::reverse: return "reverse";
    case Task::lexicon_translate: return "lexicon-translate";
  }
  return "?";
}

/// One desk-scale experiment: data, model, training and decoding settings.
struct ExperimentSpec {
  Task task = Task::reverse;
  std::size_t n_symbols = 24;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::size_t train_size = 8000;
  std::size_t valid_size = 200;
  std::size_t test_size = 500;
  std::uint64_t data_seed = 1;
  std::size_t src_vocab_size = 64;
  std::size_t tgt_vocab_size = 64;
  bool lowercase = true;
  std::string out_dir = "run";
  std::vector<std::size_t> sweep_d_aenc{8, 16, 32, 64};
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;

  void validate() const {
    if (min_len < 1 || min_len > max_len) throw ConfigError("need 1 <= min_len <= max_len");
    if (n_symbols < 2) throw ConfigError("n_symbols must be at least 2");
    if (max_len > model.max_src_len) {
      throw ConfigError("max_len " + std::to_string(max_len) + " exceeds max_src_len " +
                        std::to_string(model.max_src_len));
    }
    // Autoregressive decoders also need room for [EOS].
    const std::size_t tgt_need = model.autoregressive() ? max_len + 1 : max_len;
    if (tgt_need > model.max_tgt_len) {
      throw ConfigError("max_len " + std::to_string(max_len) + " exceeds max_tgt_len " +
                        std::to_string(model.max_tgt_len));
    }
  }

  static ExperimentSpec from_config(const ConfigMap& c) {
    c.require_known(known_keys());
    ExperimentSpec s;
    const std::string task = c.get_string("task", "reverse");
    if (task == "copy") s.task = Task::copy;
    else if (task == "reverse") s.task = Task::reverse;
    else if (task == "lexicon-translate") s.task = Task::lexicon_translate;
    else throw ConfigError("unknown task '" + task + "'");
    s.n_symbols = c.get_int<std::size_t>("n_symbols", s.n_symbols);
    s.min_len = c.get_int<std::size_t>("min_len", s.min_len);
    s.max_len = c.get_int<std::size_t>("max_len", s.max_len);
    s.train_size = c.get_int<std::size_t>("train_size", s.train_size);
    s.valid_size = c.get_int<std::size_t>("valid_size", s.valid_size);
    s.test_size = c.get_int<std::size_t>("test_size", s.test_size);
    s.data_seed = c.get_int<std::uint64_t>("data_seed", s.data_seed);
    s.src_vocab_size = c.get_int<std::size_t>("src_vocab_size", s.src_vocab_size);
    s.tgt_vocab_size = c.get_int<std::size_t>("tgt_vocab_size", s.tgt_vocab_size);
    s.lowercase = c.get_bool("lowercase", s.lowercase);
    s.out_dir = c.get_string("out_dir", s.out_dir);
    if (c.has("sweep_d_aenc")) {
      s.sweep_d_aenc.clear();
      std::stringstream ss(c.get_string("sweep_d_aenc", ""));
      std::string part;
      while (std::getline(ss, part, ',')) {
        ConfigMap one;
        one.set("sweep_d_aenc", std::string(ConfigMap::trim(part)));
        s.sweep_d_aenc.push_back(one.get_int<std::size_t>("sweep_d_aenc", 0));
      }
    }
    s.model = ModelConfig::from_config(c);
    s.train = TrainConfig::from_config(c);
    s.decode = DecodeConfig::from_config(c);
    s.validate();
    return s;
  }

  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // data
        "task", "n_symbols", "min_len", "max_len", "train_size", "valid_size", "test_size",
        "data_seed", "src_vocab_size", "tgt_vocab_size", "lowercase", "out_dir",
        "sweep_d_aenc",
        // model
        "role", "src_vocab", "tgt_vocab", "d_hidden", "n_heads", "enc_layers", "dec_layers",
        "d_ffn", "d_aenc", "d_adec", "d_adec_ffn", "enc_adapters", "dec_adapters",
        "max_src_len", "max_tgt_len", "dec_mask", "dec_kind", "dropout", "model_seed",
        // training
        "train_mode", "lr", "beta1", "beta2", "adam_eps", "batch_size", "epochs",
        "pretrain_epochs", "pretrain_lr", "mlm_fraction", "length_weight", "lr_decay", "train_seed",
        // decoding
        "decode_mode", "T", "B", "beam", "length_score"};
    return keys;
  }
};

}  // namespace abnet

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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "abnet/config.hpp"
#include "abnet/error.hpp"
#include "abnet/vocab.hpp"

namespace abnet {

using TextPair = std::pair<std::string, std::string>;

/// Fixed source-to-target symbol map. A source symbol with `swap` set
/// exchanges its translation with the next one when it heads a pair.
struct LexiconEntry {
  std::string source;
  std::string target;
  bool swap = false;
};

struct Lexicon {
  std::vector<LexiconEntry> entries;

  const LexiconEntry& find(const std::string& symbol) const {
    for (const auto& e : entries) {
      if (e.source == symbol) return e;
    }
    throw DataError("lexicon has no entry for '" + symbol + "'");
  }

  /// Left to right: a flagged symbol followed by another emits the pair's
  /// translations in reverse order and consumes both.
  std::string apply(const std::string& line) const {
    const auto words = text::split_whitespace(line);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < words.size();) {
      const auto& e = find(words[i]);
      if (e.swap && i + 1 < words.size()) {
        out.push_back(find(words[i + 1]).target);
        out.push_back(e.target);
        i += 2;
      } else {
        out.push_back(e.target);
        i += 1;
      }
    }
    std::string joined;
    for (const auto& w : out) joined += (joined.empty() ? "" : " ") + w;
    return joined;
  }
};

struct Dataset {
  std::vector<TextPair> train, valid, test;
  Lexicon lexicon;  // empty unless the task is lexicon-translate
};

inline std::vector<std::string> symbol_alphabet(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(i < 26 ? std::string(1, static_cast<char>('a' + i)) : "s" + std::to_string(i));
  }
  return out;
}

namespace detail {

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream,
                    0xabu};
  return std::mt19937_64(seq);
}

// First-order chain: with probability one half the next symbol is the
// current symbol's fixed successor, otherwise uniform.
class MarkovSource {
 public:
  MarkovSource(std::size_t symbols, std::uint64_t seed) : symbols_(symbols) {
    auto rng = stream_rng(seed, 99);
    successor_.resize(symbols);
    for (std::size_t i = 0; i < symbols; ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, symbols - 1);
      successor_[i] = pick(rng);
    }
  }

  template <class Rng>
  std::vector<std::size_t> sample(std::size_t len, Rng& rng) const {
    std::uniform_int_distribution<std::size_t> uniform(0, symbols_ - 1);
    std::bernoulli_distribution follow(0.5);
    std::vector<std::size_t> out;
    out.push_back(uniform(rng));
    while (out.size() < len) out.push_back(follow(rng) ? successor_[out.back()] : uniform(rng));
    return out;
  }

 private:
  std::size_t symbols_;
  std::vector<std::size_t> successor_;
};

}  // namespace detail

inline Lexicon make_lexicon(std::size_t n_symbols, std::uint64_t seed) {
  const auto alphabet = symbol_alphabet(n_symbols);
  auto rng = detail::stream_rng(seed, 7);
  std::vector<std::size_t> perm(n_symbols);
  for (std::size_t i = 0; i < n_symbols; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::bernoulli_distribution flag(0.25);
  Lexicon lex;
  for (std::size_t i = 0; i < n_symbols; ++i) {
    lex.entries.push_back({alphabet[i], alphabet[perm[i]], flag(rng)});
  }
  return lex;
}

/// Test, valid and train splits come from separate seed streams, generated in
/// that order; a source line already used by any split is skipped.
inline Dataset gen_synthetic(const ExperimentSpec& spec) {
  spec.validate();
  const auto alphabet = symbol_alphabet(spec.n_symbols);
  const detail::MarkovSource source(spec.n_symbols, spec.data_seed);
  Dataset ds;
  if (spec.task == Task::lexicon_translate) ds.lexicon = make_lexicon(spec.n_symbols, spec.data_seed);
  std::set<std::string> seen;
  auto fill = [&](std::vector<TextPair>& out, std::size_t count, std::uint32_t stream) {
    auto rng = detail::stream_rng(spec.data_seed, stream);
    std::uniform_int_distribution<std::size_t> length(spec.min_len, spec.max_len);
    std::size_t attempts = 0;
    while (out.size() < count) {
      if (++attempts > 1000 * (count + 1)) {
        throw DataError("cannot draw " + std::to_string(count) +
                        " distinct sources; widen the length range or symbol set");
      }
      const auto ids = source.sample(length(rng), rng);
      std::string src;
      for (const std::size_t i : ids) src += (src.empty() ? "" : " ") + alphabet[i];
      if (!seen.insert(src).second) continue;
      std::string tgt;
      if (spec.task == Task::copy) {
        tgt = src;
      } else if (spec.task == Task::reverse) {
        for (auto it = ids.rbegin(); it != ids.rend(); ++it) tgt += (tgt.empty() ? "" : " ") + alphabet[*it];
      } else {
        tgt = ds.lexicon.apply(src);
      }
      out.emplace_back(std::move(src), std::move(tgt));
    }
  };
  fill(ds.test, spec.test_size, 3);
  fill(ds.valid, spec.valid_size, 2);
  fill(ds.train, spec.train_size, 1);
  return ds;
}

inline void write_pairs(const std::string& path, const std::vector<TextPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& [s, t] : pairs) {
    if (s.find_first_of("\t\n") != std::string::npos || t.find_first_of("\t\n") != std::string::npos) {
      throw DataError("pair contains a tab or newline");
    }
    out << s << '\t' << t << '\n';
  }
}

inline std::vector<TextPair> read_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path);
  std::vector<TextPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected source<TAB>target");
    }
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

inline void write_lexicon(const std::string& path, const Lexicon& lex) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& e : lex.entries) out << e.source << '\t' << e.target << '\t' << (e.swap ? 1 : 0) << '\n';
}

inline Lexicon read_lexicon(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open lexicon " + path);
  Lexicon lex;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    LexiconEntry e;
    std::string flag;
    if (!std::getline(ss, e.source, '\t') || !std::getline(ss, e.target, '\t') || !std::getline(ss, flag)) {
      throw DataError("malformed lexicon line '" + line + "'");
    }
    e.swap = flag == "1";
    lex.entries.push_back(std::move(e));
  }
  return lex;
}

/// Writes train.tsv, valid.tsv, test.tsv and, for the lexicon task,
/// lexicon.tsv into `dir`.
inline void write_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  write_pairs((root / "train.tsv").string(), ds.train);
  write_pairs((root / "valid.tsv").string(), ds.valid);
  write_pairs((root / "test.tsv").string(), ds.test);
  if (!ds.lexicon.entries.empty()) write_lexicon((root / "lexicon.tsv").string(), ds.lexicon);
}

inline Dataset read_dataset(const std::string& dir) {
  const std::filesystem::path root(dir);
  Dataset ds;
  ds.train = read_pairs((root / "train.tsv").string());
  ds.valid = read_pairs((root / "valid.tsv").string());
  ds.test = read_pairs((root / "test.tsv").string());
  if (std::filesystem::exists(root / "lexicon.tsv")) ds.lexicon = read_lexicon((root / "lexicon.tsv").string());
  return ds;
}

}  // namespace abnet

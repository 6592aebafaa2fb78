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
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "abnet/error.hpp"

namespace abnet {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kLengthId = 3;
inline constexpr int kBosId = 4;
inline constexpr int kEosId = 5;
inline constexpr int kNumSpecialTokens = 6;

inline constexpr std::array<std::string_view, kNumSpecialTokens> kSpecialTokens = {
    "[PAD]", "[UNK]", "[MASK]", "[LENGTH]", "[BOS]", "[EOS]"};

inline constexpr std::string_view kContinuationPrefix = "##";

inline bool is_special_id(int id) { return id >= 0 && id < kNumSpecialTokens; }

namespace text {

inline std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) words.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

inline std::string normalize_whitespace(std::string_view line) {
  std::string out;
  for (const auto& w : split_whitespace(line)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// Byte offsets of UTF-8 code point starts, plus a trailing end offset.
// Malformed bytes are treated as single-byte code points.
inline std::vector<std::size_t> codepoint_offsets(std::string_view word) {
  std::vector<std::size_t> offsets;
  std::size_t i = 0;
  while (i < word.size()) {
    offsets.push_back(i);
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    len = std::min(len, word.size() - i);
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    i += len;
  }
  offsets.push_back(word.size());
  return offsets;
}

// ASCII-only case folding.
inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace text

/// Token list with reserved special ids 0..5. Immutable once built.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary from_tokens(std::vector<std::string> tokens, bool lowercase = true) {
    if (tokens.size() < kNumSpecialTokens) {
      throw DataError("vocabulary must start with the " +
                      std::to_string(kNumSpecialTokens) + " special tokens");
    }
    for (int i = 0; i < kNumSpecialTokens; ++i) {
      if (tokens[i] != kSpecialTokens[i]) {
        throw DataError("vocabulary line " + std::to_string(i + 1) + " must be " +
                        std::string(kSpecialTokens[i]) + ", found '" + tokens[i] + "'");
      }
    }
    Vocabulary v;
    v.lowercase_ = lowercase;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].empty()) throw DataError("empty token at id " + std::to_string(i));
      if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
        throw DataError("duplicate token '" + tokens[i] + "'");
      }
      const std::string_view body = std::string_view(tokens[i]).starts_with(kContinuationPrefix)
                                        ? std::string_view(tokens[i]).substr(2)
                                        : std::string_view(tokens[i]);
      v.max_piece_chars_ =
          std::max(v.max_piece_chars_, text::codepoint_offsets(body).size() - 1);
    }
    v.tokens_ = std::move(tokens);
    return v;
  }

  static Vocabulary load(const std::string& path, bool lowercase = true) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return from_tokens(std::move(tokens), lowercase);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool lowercase() const noexcept { return lowercase_; }
  std::size_t max_piece_chars() const noexcept { return max_piece_chars_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::optional<int> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(std::string_view token) const { return find(token).has_value(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  bool lowercase_ = true;
  std::size_t max_piece_chars_ = 1;
};

/// Alphabet units (word-initial characters and "##"-continuation characters)
/// are always included so encode never fails on the build corpus; remaining
/// slots go to the most frequent multi-character pieces, ties broken
/// lexicographically.
inline Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t target_size,
                              bool lowercase = true, std::size_t max_piece_chars = 16) {
  std::map<std::string, std::size_t> word_counts;
  for (const auto& line : corpus) {
    for (auto& w : text::split_whitespace(line)) {
      ++word_counts[lowercase ? text::to_lower(w) : w];
    }
  }
  if (word_counts.empty()) throw DataError("build_vocab: empty corpus");

  auto is_reserved = [](const std::string& piece) {
    return std::find(kSpecialTokens.begin(), kSpecialTokens.end(), piece) !=
           kSpecialTokens.end();
  };
  auto piece_at = [](const std::string& word, const std::vector<std::size_t>& cp,
                     std::size_t from, std::size_t to) {
    std::string p = from == 0 ? std::string() : std::string(kContinuationPrefix);
    p += word.substr(cp[from], cp[to] - cp[from]);
    return p;
  };

  std::map<std::string, std::size_t> units;
  std::map<std::string, std::size_t> merged;
  for (const auto& [word, count] : word_counts) {
    const auto cp = text::codepoint_offsets(word);
    const std::size_t n = cp.size() - 1;
    for (std::size_t s = 0; s < n; ++s) {
      units[piece_at(word, cp, s, s + 1)] += count;
      for (std::size_t e = s + 2; e <= std::min(n, s + max_piece_chars); ++e) {
        merged[piece_at(word, cp, s, e)] += count;
      }
    }
  }
  const std::size_t required = kNumSpecialTokens + units.size();
  if (target_size < required) {
    throw ConfigError("build_vocab: target size " + std::to_string(target_size) +
                      " is below the " + std::to_string(required) +
                      " entries needed for special tokens and the corpus alphabet");
  }

  std::vector<std::string> tokens(kSpecialTokens.begin(), kSpecialTokens.end());
  for (const auto& [unit, count] : units) {
    if (!is_reserved(unit)) tokens.push_back(unit);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(merged.begin(), merged.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [piece, count] : ranked) {
    if (tokens.size() >= target_size) break;
    if (!is_reserved(piece)) tokens.push_back(piece);
  }
  return Vocabulary::from_tokens(std::move(tokens), lowercase);
}

/// Greedy longest-match-first wordpiece segmentation. A word with any
/// unmatchable span becomes a single [UNK]. Never emits other special ids.
inline std::vector<int> encode(std::string_view line, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (auto word : text::split_whitespace(line)) {
    if (vocab.lowercase()) word = text::to_lower(word);
    const auto cp = text::codepoint_offsets(word);
    const std::size_t n = cp.size() - 1;
    std::vector<int> pieces;
    std::size_t start = 0;
    bool unknown = false;
    while (start < n) {
      std::optional<int> found;
      std::size_t end = std::min(n, start + vocab.max_piece_chars());
      for (; end > start; --end) {
        std::string piece = start == 0 ? std::string() : std::string(kContinuationPrefix);
        piece += word.substr(cp[start], cp[end] - cp[start]);
        const auto id = vocab.find(piece);
        if (id && !is_special_id(*id)) {
          found = id;
          break;
        }
      }
      if (!found) {
        unknown = true;
        break;
      }
      pieces.push_back(*found);
      start = end;
    }
    if (unknown) {
      ids.push_back(kUnkId);
    } else {
      ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
  }
  return ids;
}

/// Joins "##" pieces onto their predecessor and drops special tokens.
inline std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (const int id : ids) {
    const std::string& tok = vocab.token(id);
    if (is_special_id(id)) continue;
    if (std::string_view(tok).starts_with(kContinuationPrefix) && !out.empty()) {
      out += std::string_view(tok).substr(kContinuationPrefix.size());
    } else {
      if (!out.empty()) out += ' ';
      out += std::string_view(tok).starts_with(kContinuationPrefix)
                 ? std::string_view(tok).substr(kContinuationPrefix.size())
                 : std::string_view(tok);
    }
  }
  return out;
}

}  // namespace abnet

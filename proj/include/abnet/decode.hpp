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
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "abnet/autodiff.hpp"
#include "abnet/config.hpp"
#include "abnet/error.hpp"
#include "abnet/model.hpp"
#include "abnet/params.hpp"
#include "abnet/vocab.hpp"

namespace abnet {

/// The B highest-scoring length classes as lengths (class k is length
/// k + 1), ordered by logit descending, ties to the smaller length.
template <class T>
std::vector<std::size_t> predict_lengths(std::span<const T> logits, std::size_t B) {
  if (B == 0 || B > logits.size()) {
    throw ConfigError("length beam " + std::to_string(B) + " must be in 1.." + std::to_string(logits.size()));
  }
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < B; ++i) out.push_back(order[i] + 1);
  return out;
}

/// Linear decay: floor(L (T - t) / T); zero once t >= T.
inline std::size_t remask_count(std::size_t L, std::size_t T, std::size_t t) {
  if (T == 0) throw ConfigError("T must be at least 1");
  if (t >= T) return 0;
  return L * (T - t) / T;
}

/// One Mask-Predict candidate. `t` counts completed prediction passes.
struct DecodeState {
  std::size_t length = 0;
  std::vector<int> canvas;
  std::vector<double> prob;
  std::vector<std::uint8_t> masked;
  std::size_t t = 0;
  std::vector<int> previous;
};

inline bool stop_condition(const DecodeState& s, std::size_t T) {
  if (s.t < 1) throw ContractError("stop_condition requires at least one completed pass");
  return s.t >= T || s.canvas == s.previous || remask_count(s.length, T, s.t) == 0;
}

/// Called after every pass with the state and the positions re-predicted in
/// that pass (all positions for the first pass).
using DecodeTraceFn = std::function<void(const DecodeState&, const std::vector<std::size_t>& remasked)>;

struct CandidateResult {
  std::size_t length = 0;
  std::vector<int> tokens;
  double score = 0.0;           // mean log stored probability
  double length_logprob = 0.0;  // log P(L | x) from the length head
  std::size_t passes = 0;
};

struct DecodeResult {
  std::vector<int> tokens;
  double score = 0.0;
  std::size_t iterations = 0;     // passes of the selected candidate
  std::size_t decoder_calls = 0;  // over all candidates
  bool truncated = false;
  std::vector<CandidateResult> candidates;
};

namespace detail {

// Best non-special token at a logit row with its full-softmax probability.
template <class T>
std::pair<int, double> best_token(std::span<const T> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const T v : row) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (const T v : row) z += std::exp(static_cast<double>(v) - mx);
  int best = -1;
  for (std::size_t c = kNumSpecialTokens; c < row.size(); ++c) {
    if (best < 0 || row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  if (best < 0) throw ContractError("target vocabulary has no ordinary tokens");
  const double p = std::exp(static_cast<double>(row[static_cast<std::size_t>(best)]) - mx) / z;
  return {best, p};
}

inline std::vector<int> with_length_prefix(std::span<const int> src) {
  std::vector<int> ids{kLengthId};
  ids.insert(ids.end(), src.begin(), src.end());
  return ids;
}

template <class T>
EncoderOutput<T> tile(const EncoderOutput<T>& enc, std::size_t k) {
  if (enc.batch != 1) throw ContractError("tile expects a single encoded source");
  const auto& h = enc.hidden.value();
  Tensor<T> out({k * h.rows(), h.cols()});
  for (std::size_t i = 0; i < k; ++i) std::copy(h.data(), h.data() + h.size(), out.data() + i * h.size());
  EncoderOutput<T> t;
  t.hidden = Var<T>::constant(std::move(out));
  t.batch = k;
  t.len = enc.len;
  t.lengths.assign(k, enc.lengths[0]);
  return t;
}

}  // namespace detail

/// Decodes one candidate length from an all-[MASK] canvas.
template <class T>
CandidateResult mask_predict_candidate(const EncoderOutput<T>& enc, std::size_t L, const ParameterStore<T>& s,
                                       const ModelConfig& c, std::size_t T_max, ForwardTrace* counter = nullptr,
                                       const DecodeTraceFn& trace = {}) {
  NoGradGuard guard;
  ForwardOptions opts;
  opts.trace = counter;
  DecodeState st;
  st.length = L;
  st.canvas.assign(L, kMaskId);
  st.prob.assign(L, 0.0);
  st.masked.assign(L, 1);
  std::vector<std::size_t> remask(L);
  std::iota(remask.begin(), remask.end(), std::size_t{0});
  while (true) {
    st.previous = st.canvas;
    const Var<T> logits = decoder_forward(TokenBatch::from_sequences({st.canvas}), enc, s, c, opts);
    for (const std::size_t i : remask) {
      const auto [tok, p] = detail::best_token<T>(logits.value().row(i));
      st.canvas[i] = tok;
      st.prob[i] = p;
      st.masked[i] = 0;
    }
    ++st.t;
    if (trace) trace(st, remask);
    if (stop_condition(st, T_max)) break;
    const std::size_t n = remask_count(L, T_max, st.t);
    std::vector<std::size_t> order(L);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return st.prob[a] < st.prob[b]; });
    remask.assign(order.begin(), order.begin() + static_cast<long>(n));
    std::sort(remask.begin(), remask.end());
    for (const std::size_t i : remask) {
      st.canvas[i] = kMaskId;
      st.masked[i] = 1;
    }
  }
  CandidateResult r;
  r.length = L;
  r.tokens = st.canvas;
  r.passes = st.t;
  double total = 0.0;
  for (const double p : st.prob) total += std::log(p);
  r.score = total / static_cast<double>(L);
  return r;
}

/// Mask-Predict over the top-B predicted lengths. A candidate scores its mean
/// log stored probability plus, when d.length_score is set, log P(L | x);
/// the highest wins, ties to the earlier candidate.
template <class T>
DecodeResult mask_predict_decode(std::span<const int> src, const ParameterStore<T>& s, const ModelConfig& c,
                                 const DecodeConfig& d, ForwardTrace* counter = nullptr,
                                 const DecodeTraceFn& trace = {}) {
  d.validate();
  if (src.empty()) throw DataError("mask_predict_decode: empty source");
  if (c.autoregressive() || !s.has("length_head.w")) {
    throw ContractError("mask_predict_decode needs a bidirectional model with a length head");
  }
  NoGradGuard guard;
  const EncoderOutput<T> enc = encoder_forward(TokenBatch::from_sequences({detail::with_length_prefix(src)}), s, c);
  const auto lengths = predict_lengths<T>(enc.length_logits.value().row(0), d.length_beam);
  ForwardTrace local;
  ForwardTrace* count = counter ? counter : &local;
  const std::size_t calls_before = count->decoder_calls;
  const auto row = enc.length_logits.value().row(0);
  double mx = -std::numeric_limits<double>::infinity();
  for (const T v : row) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (const T v : row) z += std::exp(static_cast<double>(v) - mx);
  DecodeResult out;
  for (const std::size_t L : lengths) {
    out.candidates.push_back(mask_predict_candidate(enc, L, s, c, d.max_iterations, count, trace));
    out.candidates.back().length_logprob = static_cast<double>(row[L - 1]) - mx - std::log(z);
  }
  auto total = [&](const CandidateResult& r) { return r.score + (d.length_score ? r.length_logprob : 0.0); };
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.candidates.size(); ++i) {
    if (total(out.candidates[i]) > total(out.candidates[best])) best = i;
  }
  out.tokens = out.candidates[best].tokens;
  out.score = total(out.candidates[best]);
  out.iterations = out.candidates[best].passes;
  out.decoder_calls = count->decoder_calls - calls_before;
  return out;
}

/// Beam search from [BOS]. Each step expands every live hypothesis by every
/// ordinary token and [EOS], keeps the `width` best by cumulative log
/// probability, and retires [EOS]-terminated ones. Finished hypotheses are
/// ranked by log probability per emitted token ([EOS] included).
template <class T>
DecodeResult beam_search_decode(std::span<const int> src, const ParameterStore<T>& s, const ModelConfig& c,
                                std::size_t width, ForwardTrace* counter = nullptr) {
  if (width == 0) throw ConfigError("beam width must be at least 1");
  if (src.empty()) throw DataError("beam_search_decode: empty source");
  if (!c.autoregressive()) {
    throw ContractError("beam search needs a transformer-ar or causal decoder");
  }
  NoGradGuard guard;
  ForwardTrace local;
  ForwardTrace* count = counter ? counter : &local;
  ForwardOptions opts;
  opts.trace = count;
  const std::size_t calls_before = count->decoder_calls;
  const EncoderOutput<T> enc = encoder_forward(TokenBatch::from_sequences({detail::with_length_prefix(src)}), s, c);

  struct Hyp {
    std::vector<int> tokens;
    double logp = 0.0;
  };
  std::vector<Hyp> live{Hyp{}};
  std::vector<Hyp> finished;
  for (std::size_t step = 0; step < c.max_tgt_len && !live.empty(); ++step) {
    std::vector<std::vector<int>> inputs;
    for (const auto& h : live) {
      std::vector<int> in{kBosId};
      in.insert(in.end(), h.tokens.begin(), h.tokens.end());
      inputs.push_back(std::move(in));
    }
    const Var<T> logits = target_logits(TokenBatch::from_sequences(inputs), detail::tile(enc, live.size()), s, c, opts);
    struct Cand {
      double logp;
      std::size_t beam;
      int token;
    };
    std::vector<Cand> cands;
    const std::size_t V = logits.value().cols();
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto row = logits.value().row(b * (step + 1) + step);
      double mx = -std::numeric_limits<double>::infinity();
      for (const T v : row) mx = std::max(mx, static_cast<double>(v));
      double z = 0.0;
      for (const T v : row) z += std::exp(static_cast<double>(v) - mx);
      const double lz = mx + std::log(z);
      for (std::size_t v = 0; v < V; ++v) {
        if (is_special_id(static_cast<int>(v)) && static_cast<int>(v) != kEosId) continue;
        cands.push_back({live[b].logp + static_cast<double>(row[v]) - lz, b, static_cast<int>(v)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.logp > b.logp; });
    if (cands.size() > width) cands.resize(width);
    std::vector<Hyp> next;
    for (const auto& cd : cands) {
      Hyp h{live[cd.beam].tokens, cd.logp};
      if (cd.token == kEosId) {
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(cd.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (finished.size() >= width) break;
  }
  DecodeResult out;
  out.decoder_calls = count->decoder_calls - calls_before;
  auto pick = [](const std::vector<Hyp>& hs, std::size_t extra) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < hs.size(); ++i) {
      const double sc = hs[i].logp / static_cast<double>(hs[i].tokens.size() + extra);
      if (sc > best_score) {
        best_score = sc;
        best = i;
      }
    }
    return std::make_pair(best, best_score);
  };
  if (!finished.empty()) {
    const auto [i, sc] = pick(finished, 1);
    out.tokens = finished[i].tokens;
    out.score = sc;
  } else {
    const auto [i, sc] = pick(live, 0);
    out.tokens = live[i].tokens;
    out.score = sc;
    out.truncated = true;
  }
  out.iterations = out.decoder_calls;
  return out;
}

/// Decodes with the configured mode.
template <class T>
DecodeResult decode_source(std::span<const int> src, const ParameterStore<T>& s, const ModelConfig& c,
                           const DecodeConfig& d, ForwardTrace* counter = nullptr) {
  return d.mode == DecodeMode::autoregressive ? beam_search_decode(src, s, c, d.beam_width, counter)
                                              : mask_predict_decode(src, s, c, d, counter);
}

}  // namespace abnet

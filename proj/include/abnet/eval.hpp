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
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "abnet/config.hpp"
#include "abnet/decode.hpp"
#include "abnet/error.hpp"
#include "abnet/params.hpp"

namespace abnet {

struct BleuScore {
  double bleu = 0.0;                    // 0..100
  std::array<double, 4> precision{};    // clipped modified n-gram precisions
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

/// Corpus BLEU with one reference per hypothesis and no smoothing: n-gram
/// counts are summed over the corpus before dividing, and any zero
/// precision gives 0. Orders for which the hypotheses hold no n-grams at all
/// are left out of the geometric mean, so BLEU(h, h) is 100 even when every
/// sentence is shorter than four tokens. All-empty hypotheses score 0 with
/// a brevity penalty of 0.
template <class Token>
BleuScore corpus_bleu(const std::vector<std::vector<Token>>& hyps, const std::vector<std::vector<Token>>& refs) {
  if (hyps.empty()) throw DataError("corpus_bleu: empty corpus");
  if (hyps.size() != refs.size()) {
    throw DataError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses for " +
                    std::to_string(refs.size()) + " references");
  }
  std::array<std::size_t, 4> matched{}, total{};
  BleuScore out;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    out.hyp_length += h.size();
    out.ref_length += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<Token>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        matched[n - 1] += std::min(c, it == ref_counts.end() ? std::size_t{0} : it->second);
        total[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  std::size_t orders = 0;
  bool zero = out.hyp_length == 0;
  for (std::size_t n = 0; n < 4; ++n) {
    out.precision[n] = total[n] ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;
    if (total[n] == 0) continue;
    if (matched[n] == 0) zero = true;
    else log_sum += std::log(out.precision[n]);
    ++orders;
  }
  if (out.hyp_length == 0) {
    out.brevity_penalty = 0.0;
  } else {
    const double ratio = static_cast<double>(out.ref_length) / static_cast<double>(out.hyp_length);
    out.brevity_penalty = std::exp(std::min(0.0, 1.0 - ratio));
  }
  out.bleu = zero ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return out;
}

inline BleuScore corpus_bleu_text(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  std::vector<std::vector<std::string>> h, r;
  for (const auto& s : hyps) h.push_back(text::split_whitespace(s));
  for (const auto& s : refs) r.push_back(text::split_whitespace(s));
  return corpus_bleu(h, r);
}

template <class Seq>
double exact_match(const std::vector<Seq>& hyps, const std::vector<Seq>& refs) {
  if (hyps.empty()) throw DataError("exact_match: empty corpus");
  if (hyps.size() != refs.size()) throw DataError("exact_match: corpus sizes differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) hits += hyps[i] == refs[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(hyps.size());
}

struct LatencyStats {
  double mean_ms = 0.0;
  double mean_iterations = 0.0;     // selected-candidate passes (parallel)
  double mean_output_length = 0.0;  // emitted tokens
  double mean_decoder_calls = 0.0;
  std::size_t max_decoder_calls = 0;
  std::vector<DecodeResult> results;
};

using DecoderFn = std::function<DecodeResult(std::span<const int>)>;

/// Batch size 1, one warm-up decode of the first sentence, then wall-clock
/// per sentence averaged over the set.
inline LatencyStats measure_latency(const DecoderFn& decode_fn, const std::vector<std::vector<int>>& sources) {
  if (sources.empty()) throw DataError("measure_latency: empty test set");
  decode_fn(sources.front());
  LatencyStats st;
  double total_ms = 0.0;
  for (const auto& src : sources) {
    const auto t0 = std::chrono::steady_clock::now();
    DecodeResult r = decode_fn(src);
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    st.mean_iterations += static_cast<double>(r.iterations);
    st.mean_output_length += static_cast<double>(r.tokens.size());
    st.mean_decoder_calls += static_cast<double>(r.decoder_calls);
    st.max_decoder_calls = std::max(st.max_decoder_calls, r.decoder_calls);
    st.results.push_back(std::move(r));
  }
  const double n = static_cast<double>(sources.size());
  st.mean_ms = total_ms / n;
  st.mean_iterations /= n;
  st.mean_output_length /= n;
  st.mean_decoder_calls /= n;
  return st;
}

struct PartitionCount {
  std::size_t trainable = 0;
  std::size_t frozen = 0;
};

struct ParameterAudit {
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  double ratio = 0.0;  // trainable / total
  std::map<std::string, PartitionCount> modules;

  std::size_t total() const { return trainable + frozen; }
};

/// Module key: the first two dotted name components ("enc.layer3",
/// "dec.adapter4", "length_head.w").
inline std::string audit_module(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const auto second = name.find('.', first + 1);
  return second == std::string::npos ? name : name.substr(0, second);
}

template <class T>
ParameterAudit parameter_audit(const ParameterStore<T>& s) {
  ParameterAudit a;
  for (const auto& [name, e] : s.entries()) {
    const std::size_t n = e.var.value().size();
    auto& m = a.modules[audit_module(name)];
    if (e.partition == Partition::trainable) {
      a.trainable += n;
      m.trainable += n;
    } else {
      a.frozen += n;
      m.frozen += n;
    }
  }
  a.ratio = a.total() ? static_cast<double>(a.trainable) / static_cast<double>(a.total()) : 0.0;
  return a;
}

struct EvalReport {
  std::string label;
  std::string decode_mode;  // parallel | ar
  std::size_t sentences = 0;
  BleuScore bleu;
  double exact_match = 0.0;
  double latency_ms = 0.0;
  double mean_iterations = 0.0;
  double mean_output_length = 0.0;
  double mean_decoder_calls = 0.0;
  std::size_t max_decoder_calls = 0;
  std::size_t decoder_call_bound = 0;  // B*T for parallel decoding, L_max for ar
  std::size_t trainable_params = 0;
  std::size_t total_params = 0;

  static std::string tsv_header() {
    return "label\tdecode_mode\tsentences\tbleu\tp1\tp2\tp3\tp4\tbrevity_penalty\texact_match\t"
           "latency_ms\tmean_iterations\tmean_output_length\tmean_decoder_calls\tmax_decoder_calls\t"
           "decoder_call_bound\ttrainable_params\ttotal_params";
  }

  std::string tsv() const {
    std::ostringstream os;
    os << label << '\t' << decode_mode << '\t' << sentences << '\t' << fixed(bleu.bleu);
    for (const double p : bleu.precision) os << '\t' << fixed(p);
    os << '\t' << fixed(bleu.brevity_penalty) << '\t' << fixed(exact_match) << '\t' << fixed(latency_ms)
       << '\t' << fixed(mean_iterations) << '\t' << fixed(mean_output_length) << '\t'
       << fixed(mean_decoder_calls) << '\t' << max_decoder_calls << '\t' << decoder_call_bound << '\t'
       << trainable_params << '\t' << total_params;
    return os.str();
  }

  // The record without wall-clock fields, for reproducibility checks.
  std::string tsv_without_timing() const {
    EvalReport r = *this;
    r.latency_ms = 0.0;
    return r.tsv();
  }

  std::string human() const {
    std::ostringstream os;
    os << "== " << label << " (" << decode_mode << ", " << sentences << " sentences)\n"
       << "  BLEU            " << fixed(bleu.bleu) << "  (p1..p4 " << fixed(bleu.precision[0]) << ' '
       << fixed(bleu.precision[1]) << ' ' << fixed(bleu.precision[2]) << ' ' << fixed(bleu.precision[3])
       << ", BP " << fixed(bleu.brevity_penalty) << ")\n"
       << "  exact match     " << fixed(exact_match) << '\n'
       << "  latency         " << fixed(latency_ms) << " ms/sentence\n"
       << "  decoder calls   mean " << fixed(mean_decoder_calls) << ", max " << max_decoder_calls
       << ", bound " << decoder_call_bound << '\n'
       << "  iterations      " << fixed(mean_iterations) << "  output length " << fixed(mean_output_length)
       << '\n'
       << "  parameters      " << trainable_params << " trainable of " << total_params << '\n';
    return os.str();
  }

 private:
  static std::string fixed(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << v;
    return os.str();
  }
};

}  // namespace abnet

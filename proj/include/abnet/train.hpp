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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "abnet/autodiff.hpp"
#include "abnet/config.hpp"
#include "abnet/error.hpp"
#include "abnet/model.hpp"
#include "abnet/ops.hpp"
#include "abnet/params.hpp"
#include "abnet/vocab.hpp"

namespace abnet {

using Sequence = std::vector<int>;
using SequencePair = std::pair<Sequence, Sequence>;

/// Corrupted inputs plus what the loss needs to score them. For
/// autoregressive batches `input` is the [BOS]-shifted target, `original`
/// the target followed by [EOS], and every non-padding position is scored.
struct MaskedBatch {
  TokenBatch input;
  std::vector<int> original;
  std::vector<std::uint8_t> masked;
  std::vector<std::uint8_t> padding;
  TokenBatch source;  // [LENGTH]-prefixed; empty for pre-training batches
  std::vector<std::size_t> target_lengths;

  std::size_t masked_count() const {
    return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
  }
};

namespace detail {

// k distinct positions from [lo, hi), uniformly, by partial Fisher-Yates.
template <class Rng>
std::vector<std::size_t> choose_positions(std::size_t lo, std::size_t hi, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(hi - lo);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = lo + i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

inline MaskedBatch start_batch(const std::vector<Sequence>& seqs) {
  MaskedBatch mb;
  mb.input = TokenBatch::from_sequences(seqs);
  mb.original = mb.input.ids;
  mb.masked.assign(mb.original.size(), 0);
  mb.padding.assign(mb.original.size(), 0);
  for (std::size_t b = 0; b < mb.input.batch; ++b) {
    for (std::size_t i = mb.input.lengths[b]; i < mb.input.len; ++i) mb.padding[b * mb.input.len + i] = 1;
  }
  return mb;
}

}  // namespace detail

/// Number of MLM positions for a sequence: ceil(fraction * len), at least 1.
inline std::size_t mlm_mask_count(std::size_t len, double fraction) {
  const double raw = std::ceil(fraction * static_cast<double>(len) - 1e-9);
  return std::min(len, std::max<std::size_t>(1, static_cast<std::size_t>(raw)));
}

/// Masks ceil(fraction * len) positions per sequence with [MASK]. The first
/// `keep_prefix` positions (a [BOS] slot) are never chosen and do not count
/// toward len.
template <class Rng>
MaskedBatch sample_mlm_batch(const std::vector<Sequence>& seqs, double fraction, Rng& rng,
                             std::size_t keep_prefix = 0) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("mlm fraction must be in (0, 1)");
  MaskedBatch mb = detail::start_batch(seqs);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    if (seqs[b].size() <= keep_prefix) throw DataError("sample_mlm_batch: empty sequence");
    const std::size_t n = mlm_mask_count(seqs[b].size() - keep_prefix, fraction);
    for (const std::size_t i : detail::choose_positions(keep_prefix, seqs[b].size(), n, rng)) {
      mb.input.ids[b * mb.input.len + i] = kMaskId;
      mb.masked[b * mb.input.len + i] = 1;
    }
  }
  return mb;
}

/// Per target, m ~ Uniform{1..|y|} positions are masked. Sources gain the
/// [LENGTH] prefix.
template <class Rng>
MaskedBatch sample_cmlm_batch(const std::vector<SequencePair>& pairs, Rng& rng) {
  std::vector<Sequence> sources, targets;
  for (const auto& [x, y] : pairs) {
    if (y.empty()) throw DataError("sample_cmlm_batch: empty target");
    Sequence src{kLengthId};
    src.insert(src.end(), x.begin(), x.end());
    sources.push_back(std::move(src));
    targets.push_back(y);
  }
  MaskedBatch mb = detail::start_batch(targets);
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const std::size_t len = targets[b].size();
    std::uniform_int_distribution<std::size_t> count(1, len);
    const std::size_t m = count(rng);
    for (const std::size_t i : detail::choose_positions(0, len, m, rng)) {
      mb.input.ids[b * mb.input.len + i] = kMaskId;
      mb.masked[b * mb.input.len + i] = 1;
    }
    mb.target_lengths.push_back(len);
  }
  mb.source = TokenBatch::from_sequences(sources);
  return mb;
}

/// Teacher-forcing batch: input [BOS] y, scored against y [EOS].
inline MaskedBatch make_ar_batch(const std::vector<SequencePair>& pairs) {
  std::vector<Sequence> sources, inputs, outputs;
  for (const auto& [x, y] : pairs) {
    Sequence src{kLengthId};
    src.insert(src.end(), x.begin(), x.end());
    sources.push_back(std::move(src));
    Sequence in{kBosId};
    in.insert(in.end(), y.begin(), y.end());
    inputs.push_back(std::move(in));
    Sequence out = y;
    out.push_back(kEosId);
    outputs.push_back(std::move(out));
  }
  MaskedBatch mb = detail::start_batch(inputs);
  const MaskedBatch shifted = detail::start_batch(outputs);
  mb.original = shifted.original;
  for (std::size_t i = 0; i < mb.masked.size(); ++i) mb.masked[i] = mb.padding[i] ? 0 : 1;
  for (const auto& [x, y] : pairs) mb.target_lengths.push_back(y.size());
  mb.source = TokenBatch::from_sequences(sources);
  return mb;
}

template <class T>
struct LossParts {
  Var<T> total;
  double word = 0.0;
  double length = 0.0;
};

namespace detail {

inline std::vector<std::uint8_t> unscored(const std::vector<std::uint8_t>& masked) {
  std::vector<std::uint8_t> ignore(masked.size());
  for (std::size_t i = 0; i < masked.size(); ++i) ignore[i] = masked[i] ? 0 : 1;
  return ignore;
}

}  // namespace detail

/// Word loss is the mean NLL over masked target positions; the total adds
/// lambda times the length cross-entropy on the true target lengths.
/// Autoregressive models score every target position instead and have no
/// length term.
template <class T>
LossParts<T> compute_finetune_loss(const MaskedBatch& batch, const ParameterStore<T>& s,
                                   const ModelConfig& c, double length_weight,
                                   const ForwardOptions& opts = {}) {
  const EncoderOutput<T> enc = encoder_forward(batch.source, s, c, opts);
  const Var<T> logits = target_logits(batch.input, enc, s, c, opts);
  const auto ignore = detail::unscored(batch.masked);
  LossParts<T> out;
  Var<T> word = cross_entropy(logits, std::span<const int>(batch.original),
                              std::span<const std::uint8_t>(ignore));
  out.word = static_cast<double>(word.value()[0]);
  out.total = word;
  if (c.autoregressive() || length_weight == 0.0) return out;
  if (!enc.length_logits) throw ContractError("model has no length head");
  std::vector<int> classes;
  for (const std::size_t len : batch.target_lengths) {
    if (len < 1 || len > c.max_tgt_len) {
      throw LengthError("target length " + std::to_string(len) + " outside 1.." +
                        std::to_string(c.max_tgt_len));
    }
    classes.push_back(static_cast<int>(len) - 1);
  }
  const Var<T> length = cross_entropy(enc.length_logits, std::span<const int>(classes));
  out.length = static_cast<double>(length.value()[0]);
  out.total = add(word, scale(length, static_cast<T>(length_weight)));
  return out;
}

/// Masked-language-model loss of one backbone stack with its tied head.
template <class T>
Var<T> mlm_loss(const MaskedBatch& batch, const ParameterStore<T>& s, const std::string& side,
                std::size_t layers, const ModelConfig& c, const ForwardOptions& opts = {}) {
  const Var<T> h = backbone_forward(batch.input, side, layers, s, c, opts);
  const Var<T> logits = matmul_nt(h, s.get(side + ".tok_emb"));
  const auto ignore = detail::unscored(batch.masked);
  return cross_entropy(logits, std::span<const int>(batch.original),
                       std::span<const std::uint8_t>(ignore));
}

/// Adam over the TRAINABLE tensors of a store; moment buffers are keyed by
/// parameter name.
template <class T>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  explicit Adam(const TrainConfig& t) : Adam(t.lr, t.beta1, t.beta2, t.adam_eps) {}

  void step(ParameterStore<T>& s) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, e] : s.entries()) {
      if (e.partition != Partition::trainable) continue;
      Var<T> var = e.var;
      if (!var.grad().allocated()) continue;
      auto& slot = slots_[name];
      if (!slot.m.allocated()) {
        slot.m = Tensor<double>(var.shape());
        slot.v = Tensor<double>(var.shape());
      }
      T* w = var.mutable_value().data();
      const T* g = var.grad().data();
      for (std::size_t i = 0; i < slot.m.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gi;
        slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
        const double update = lr_ * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + eps_);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }
  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }
  bool tracks(const std::string& name) const { return slots_.count(name) != 0; }

 private:
  struct Slot {
    Tensor<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

struct StepRecord {
  std::size_t step = 0;
  TrainMode mode = TrainMode::finetune_adapters;
  double loss = 0.0;
  double word_loss = 0.0;
  double length_loss = 0.0;
  double wall_ms = 0.0;
};

/// Tab-separated metrics: step, mode, loss, word-loss, length-loss, wall-ms.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::ostream* out) : out_(out) {}

  void write(const StepRecord& r) {
    if (!out_) return;
    *out_ << r.step << '\t' << to_string(r.mode) << '\t' << format_real(r.loss) << '\t'
          << format_real(r.word_loss) << '\t' << format_real(r.length_loss) << '\t'
          << format_real(r.wall_ms) << '\n';
  }

  static StepRecord parse(const std::string& line) {
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const std::size_t tab = line.find('\t', pos);
      f.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (f.size() != 6) throw DataError("metrics line needs 6 fields, got " + std::to_string(f.size()));
    StepRecord r;
    r.step = std::stoul(f[0]);
    r.mode = parse_train_mode(f[1]);
    r.loss = std::stod(f[2]);
    r.word_loss = std::stod(f[3]);
    r.length_loss = std::stod(f[4]);
    r.wall_ms = std::stod(f[5]);
    return r;
  }

 private:
  std::ostream* out_ = nullptr;
};

namespace detail {

template <class T, class LossFn>
LossParts<T> guarded_step(ParameterStore<T>& s, Adam<T>& adam, std::size_t step, LossFn&& fn) {
  s.zero_grad();
  LossParts<T> parts;
  try {
    parts = fn();
    const double v = static_cast<double>(parts.total.value()[0]);
    if (!std::isfinite(v)) throw NumericError("loss is not finite");
    backward(parts.total);
  } catch (const NumericError& e) {
    throw TrainingError("training aborted at step " + std::to_string(step) + ": " + e.what());
  }
  for (const auto& [name, e] : s.entries()) {
    if (e.partition == Partition::trainable && e.var.grad().allocated() && !e.var.grad().all_finite()) {
      throw TrainingError("training aborted at step " + std::to_string(step) +
                          ": non-finite gradient in '" + name + "'");
    }
  }
  adam.step(s);
  return parts;
}

inline std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// One optimizer update on a fine-tuning batch. FROZEN tensors are never
/// written. Non-finite values abort with TrainingError.
template <class T>
LossParts<T> train_step(const MaskedBatch& batch, ParameterStore<T>& s, Adam<T>& adam,
                        const ModelConfig& c, const TrainConfig& t,
                        const ForwardOptions& opts = {}) {
  return detail::guarded_step(s, adam, adam.steps() + 1, [&] {
    return compute_finetune_loss(batch, s, c, t.length_weight, opts);
  });
}

/// Shuffled batches of indices. With bucket_batches > 1, each window of
/// that many batches is sorted by length before it is cut, so batches hold
/// similar lengths; 0 or 1 gives plain shuffled batches. Order depends only
/// on (seed, epoch).
inline std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& lengths,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed, std::size_t epoch,
                                                           std::size_t bucket_batches = 32) {
  auto rng = detail::epoch_rng(seed, epoch, 0);
  std::vector<std::size_t> order(lengths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bucket = batch_size * bucket_batches;
  for (std::size_t lo = 0; bucket > batch_size && lo < order.size(); lo += bucket) {
    const auto first = order.begin() + static_cast<long>(lo);
    const auto last = order.begin() + static_cast<long>(std::min(order.size(), lo + bucket));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t lo = 0; lo < order.size(); lo += batch_size) {
    batches.emplace_back(order.begin() + static_cast<long>(lo),
                         order.begin() + static_cast<long>(std::min(order.size(), lo + batch_size)));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

struct TrainSummary {
  std::vector<double> epoch_loss;  // mean total loss per epoch
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

namespace detail {

class Stopwatch {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

/// MLM pre-training of one stack ("enc" for XBERT, "dec" for YBERT) on
/// monolingual id sequences. Source-side sequences get a leading [BOS]
/// slot, later taken by [LENGTH].
template <class T = float>
ParameterStore<T> pretrain_backbone(const std::vector<Sequence>& corpus, const std::string& side,
                                    const ModelConfig& c, const TrainConfig& t,
                                    MetricsLog log = {}, const EpochCallback& on_epoch = {}) {
  t.validate();
  if (corpus.empty()) throw DataError("pretrain_backbone: empty corpus");
  ParameterStore<T> s = init_backbone<T>(c, side, c.seed + (side == "enc" ? 11 : 23));
  const std::size_t layers = side == "enc" ? c.enc_layers : c.dec_layers;
  const std::size_t prefix = side == "enc" ? 1 : 0;
  std::vector<Sequence> seqs;
  std::vector<std::size_t> lengths;
  for (const auto& x : corpus) {
    Sequence q;
    if (prefix) q.push_back(kBosId);
    q.insert(q.end(), x.begin(), x.end());
    lengths.push_back(q.size());
    seqs.push_back(std::move(q));
  }
  Adam<T> adam(t.pretrain_lr > 0.0 ? t.pretrain_lr : t.lr, t.beta1, t.beta2, t.adam_eps);
  detail::Stopwatch clock;
  for (std::size_t epoch = 0; epoch < t.pretrain_epochs; ++epoch) {
    auto mask_rng = detail::epoch_rng(t.seed, epoch, 1);
    double total = 0.0;
    const auto batches = epoch_batches(lengths, t.batch_size, t.seed, epoch);
    for (const auto& idx : batches) {
      std::vector<Sequence> group;
      for (const std::size_t i : idx) group.push_back(seqs[i]);
      const MaskedBatch mb = sample_mlm_batch(group, t.mlm_fraction, mask_rng, prefix);
      const auto parts = detail::guarded_step(s, adam, adam.steps() + 1, [&] {
        LossParts<T> p;
        p.total = mlm_loss(mb, s, side, layers, c);
        p.word = static_cast<double>(p.total.value()[0]);
        return p;
      });
      total += parts.word;
      log.write({adam.steps(), TrainMode::pretrain_mlm, parts.word, parts.word, 0.0, clock.ms()});
    }
    if (on_epoch) on_epoch(epoch + 1, total / static_cast<double>(batches.size()));
  }
  return s;
}

/// Held-out MLM evaluation: mean loss and masked-token accuracy.
template <class T>
std::pair<double, double> evaluate_mlm(const ParameterStore<T>& s, const std::vector<Sequence>& corpus,
                                       const std::string& side, const ModelConfig& c, double fraction,
                                       std::uint64_t seed, std::size_t batch_size = 64) {
  NoGradGuard guard;
  std::mt19937_64 rng(seed);
  const std::size_t layers = side == "enc" ? c.enc_layers : c.dec_layers;
  const std::size_t prefix = side == "enc" ? 1 : 0;
  double loss_sum = 0.0;
  std::size_t correct = 0, scored = 0;
  for (std::size_t lo = 0; lo < corpus.size(); lo += batch_size) {
    std::vector<Sequence> group;
    for (std::size_t i = lo; i < std::min(corpus.size(), lo + batch_size); ++i) {
      Sequence q;
      if (prefix) q.push_back(kBosId);
      q.insert(q.end(), corpus[i].begin(), corpus[i].end());
      group.push_back(std::move(q));
    }
    const MaskedBatch mb = sample_mlm_batch(group, fraction, rng, prefix);
    const Var<T> h = backbone_forward(mb.input, side, layers, s, c);
    const Var<T> logits = matmul_nt(h, s.get(side + ".tok_emb"));
    const auto ignore = detail::unscored(mb.masked);
    const std::size_t n = mb.masked_count();
    loss_sum += static_cast<double>(cross_entropy(logits, std::span<const int>(mb.original),
                                                  std::span<const std::uint8_t>(ignore))
                                        .value()[0]) *
                static_cast<double>(n);
    for (std::size_t r = 0; r < mb.masked.size(); ++r) {
      if (!mb.masked[r]) continue;
      const auto row = logits.value().row(r);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      correct += static_cast<int>(best) == mb.original[r] ? 1 : 0;
    }
    scored += n;
  }
  return {loss_sum / static_cast<double>(scored), static_cast<double>(correct) / static_cast<double>(scored)};
}

/// Fine-tunes an assembled model for `t.epochs` epochs. The partition of the
/// store decides what moves.
template <class T>
TrainSummary finetune(ParameterStore<T>& s, const std::vector<SequencePair>& pairs, const ModelConfig& c,
                      const TrainConfig& t, MetricsLog log = {}, const EpochCallback& on_epoch = {}) {
  t.validate();
  if (pairs.empty()) throw DataError("finetune: no training pairs");
  const std::vector<std::size_t> lengths(pairs.size(), 0);
  Adam<T> adam(t);
  TrainSummary summary;
  detail::Stopwatch clock;
  std::mt19937_64 dropout_rng(t.seed ^ 0x9e3779b97f4a7c15ULL);
  ForwardOptions opts;
  if (c.dropout > 0.0) opts.dropout_rng = &dropout_rng;
  for (std::size_t epoch = 0; epoch < t.epochs; ++epoch) {
    auto mask_rng = detail::epoch_rng(t.seed, epoch, 2);
    double total = 0.0;
    const auto batches = epoch_batches(lengths, t.batch_size, t.seed, epoch, 0);
    for (const auto& idx : batches) {
      if (t.lr_decay) {
        const double done = static_cast<double>(adam.steps()) / static_cast<double>(batches.size() * t.epochs);
        adam.set_lr(t.lr * (1.0 - done));
      }
      std::vector<SequencePair> group;
      for (const std::size_t i : idx) group.push_back(pairs[i]);
      const MaskedBatch mb = c.autoregressive() ? make_ar_batch(group) : sample_cmlm_batch(group, mask_rng);
      const auto parts = train_step(mb, s, adam, c, t, opts);
      const double loss = static_cast<double>(parts.total.value()[0]);
      total += loss;
      log.write({adam.steps(), t.mode, loss, parts.word, parts.length, clock.ms()});
    }
    summary.epoch_loss.push_back(total / static_cast<double>(batches.size()));
    if (on_epoch) on_epoch(epoch + 1, summary.epoch_loss.back());
  }
  summary.steps = adam.steps();
  return summary;
}

}  // namespace abnet

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
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "abnet/autodiff.hpp"
#include "abnet/config.hpp"
#include "abnet/error.hpp"
#include "abnet/ops.hpp"
#include "abnet/params.hpp"
#include "abnet/vocab.hpp"

namespace abnet {

inline constexpr double kLayerNormEps = 1e-5;

/// Right-padded batch of token sequences, row-major (batch, len).
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;

  static TokenBatch from_sequences(const std::vector<std::vector<int>>& seqs) {
    TokenBatch b;
    b.batch = seqs.size();
    for (const auto& s : seqs) b.len = std::max(b.len, s.size());
    b.ids.assign(b.batch * b.len, kPadId);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      std::copy(seqs[i].begin(), seqs[i].end(), b.ids.begin() + static_cast<long>(i * b.len));
      b.lengths.push_back(seqs[i].size());
    }
    return b;
  }

  int at(std::size_t b, std::size_t i) const { return ids[b * len + i]; }
  bool padding(std::size_t b, std::size_t i) const { return i >= lengths[b]; }
};

/// Records the order of stack components and counts decoder passes.
struct ForwardTrace {
  std::vector<std::string> events;
  std::size_t decoder_calls = 0;
};

struct ForwardOptions {
  ForwardTrace* trace = nullptr;
  // Dropout is active only when a generator is supplied.
  std::mt19937_64* dropout_rng = nullptr;
};

template <class T>
struct EncoderOutput {
  Var<T> hidden;         // (batch * len, d)
  Var<T> length_logits;  // (batch, L_max); null without a length head
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::size_t> lengths;
};

namespace detail {

inline void trace_event(const ForwardOptions& o, std::string event) {
  if (o.trace) o.trace->events.push_back(std::move(event));
}

template <class T>
Var<T> maybe_dropout(const Var<T>& x, double rate, const ForwardOptions& o) {
  if (!o.dropout_rng || rate <= 0.0) return x;
  return dropout(x, rate, *o.dropout_rng);
}

}  // namespace detail

template <class T>
Var<T> multi_head_attention(const Var<T>& query_in, const Var<T>& kv_in,
                            const AttentionLayout& layout, const ParameterStore<T>& s,
                            const std::string& p) {
  const Var<T> q = linear(query_in, s.get(p + ".wq"), s.get(p + ".bq"));
  const Var<T> k = linear(kv_in, s.get(p + ".wk"), s.get(p + ".bk"));
  const Var<T> v = linear(kv_in, s.get(p + ".wv"), s.get(p + ".bv"));
  return linear(attention(q, k, v, layout), s.get(p + ".wo"), s.get(p + ".bo"));
}

template <class T>
Var<T> feed_forward(const Var<T>& h, const ParameterStore<T>& s, const std::string& p) {
  return linear(relu(linear(h, s.get(p + ".w1"), s.get(p + ".b1"))), s.get(p + ".w2"),
                s.get(p + ".b2"));
}

template <class T>
Var<T> norm(const Var<T>& h, const ParameterStore<T>& s, const std::string& p) {
  return layer_norm(h, s.get(p + ".gain"), s.get(p + ".bias"), kLayerNormEps);
}

/// Token plus absolute position embedding, then layer norm. `prefix` selects
/// the stack ("enc", "dec" or "ar"). On the encoder side the [LENGTH] id
/// reads the dedicated `enc.length_emb` row when the store has one.
template <class T>
Var<T> embed(const TokenBatch& batch, const std::string& prefix, const ParameterStore<T>& s) {
  const Var<T>& pos = s.get(prefix + ".pos_emb");
  const std::size_t positions = pos.shape()[0];
  const std::size_t d = pos.shape()[1];
  if (batch.len > positions) {
    throw LengthError(prefix + " sequence length " + std::to_string(batch.len) +
                      " exceeds the " + std::to_string(positions) + " available positions");
  }
  const std::string length_row = prefix + ".length_emb";
  const Var<T> tok = s.has(length_row)
                         ? embedding(s.get(prefix + ".tok_emb"), batch.ids, s.get(length_row), kLengthId)
                         : embedding(s.get(prefix + ".tok_emb"), batch.ids);
  std::vector<int> position_ids(batch.batch * batch.len);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t i = 0; i < batch.len; ++i) position_ids[b * batch.len + i] = static_cast<int>(i);
  }
  if (position_ids.empty()) return Var<T>::constant(Tensor<T>({0, d}));
  return norm(add(tok, embedding(pos, position_ids)), s, prefix + ".emb_ln");
}

/// Post-LN transformer layer: S = LN(h + MHA(h)), out = LN(S + FFN(S)).
template <class T>
Var<T> bert_layer(const Var<T>& h, const AttentionLayout& layout, const ParameterStore<T>& s,
                  const std::string& p, double dropout_rate = 0.0,
                  const ForwardOptions& opts = {}) {
  const Var<T> a = detail::maybe_dropout(multi_head_attention(h, h, layout, s, p + ".attn"),
                                         dropout_rate, opts);
  const Var<T> st = norm(add(h, a), s, p + ".ln1");
  const Var<T> f = detail::maybe_dropout(feed_forward(st, s, p + ".ffn"), dropout_rate, opts);
  return norm(add(st, f), s, p + ".ln2");
}

/// H + W2 ReLU(W1 LN(H) + b1) + b2. The inner layer norm has no parameters.
template <class T>
Var<T> encoder_adapter(const Var<T>& h, const ParameterStore<T>& s, const std::string& p) {
  const Var<T> z = linear(layer_norm<T>(h, {}, {}, kLayerNormEps), s.get(p + ".w1"), s.get(p + ".b1"));
  return add(h, linear(relu(z), s.get(p + ".w2"), s.get(p + ".b2")));
}

/// Z = LN(CrossAttn(y, H_E, H_E) + y), out = LN(FFN(Z) + Z).
template <class T>
Var<T> decoder_adapter(const Var<T>& y, const Var<T>& enc_hidden, const AttentionLayout& cross,
                       const ParameterStore<T>& s, const std::string& p,
                       double dropout_rate = 0.0, const ForwardOptions& opts = {}) {
  const Var<T> a = detail::maybe_dropout(multi_head_attention(y, enc_hidden, cross, s, p + ".attn"),
                                         dropout_rate, opts);
  const Var<T> z = norm(add(a, y), s, p + ".ln1");
  const Var<T> f = detail::maybe_dropout(feed_forward(z, s, p + ".ffn"), dropout_rate, opts);
  return norm(add(f, z), s, p + ".ln2");
}

inline AttentionLayout self_layout(const TokenBatch& b, std::size_t heads, bool causal) {
  AttentionLayout l;
  l.batch = b.batch;
  l.query_len = b.len;
  l.key_len = b.len;
  l.heads = heads;
  l.key_lengths = b.lengths;
  l.causal = causal;
  return l;
}

template <class T>
AttentionLayout cross_layout(const TokenBatch& tgt, const EncoderOutput<T>& enc,
                             std::size_t heads) {
  if (enc.batch != tgt.batch) {
    throw DimensionError("decoder batch " + std::to_string(tgt.batch) +
                         " does not match encoder batch " + std::to_string(enc.batch));
  }
  AttentionLayout l;
  l.batch = tgt.batch;
  l.query_len = tgt.len;
  l.key_len = enc.len;
  l.heads = heads;
  l.key_lengths = enc.lengths;
  return l;
}

/// Embedding plus `layers` BERT layers of one stack, no adapters. Used for
/// masked-language-model pre-training.
template <class T>
Var<T> backbone_forward(const TokenBatch& batch, const std::string& prefix, std::size_t layers,
                        const ParameterStore<T>& s, const ModelConfig& c,
                        const ForwardOptions& opts = {}) {
  Var<T> h = embed(batch, prefix, s);
  const AttentionLayout layout = self_layout(batch, c.n_heads, false);
  for (std::size_t i = 1; i <= layers; ++i) {
    h = bert_layer(h, layout, s, prefix + ".layer" + std::to_string(i), c.dropout, opts);
  }
  return h;
}

/// Source ids must start with [LENGTH]. Layers in the encoder adapter set
/// run their adapter after the BERT layer. Length logits come from the final
/// hidden state at the [LENGTH] position; class k means length k + 1.
template <class T>
EncoderOutput<T> encoder_forward(const TokenBatch& src, const ParameterStore<T>& s,
                                 const ModelConfig& c, const ForwardOptions& opts = {}) {
  for (std::size_t b = 0; b < src.batch; ++b) {
    if (src.lengths[b] == 0 || src.at(b, 0) != kLengthId) {
      throw ContractError("encoder input " + std::to_string(b) + " lacks the [LENGTH] prefix");
    }
  }
  EncoderOutput<T> out;
  out.batch = src.batch;
  out.len = src.len;
  out.lengths = src.lengths;
  Var<T> h = embed(src, "enc", s);
  const AttentionLayout layout = self_layout(src, c.n_heads, false);
  for (std::size_t i = 1; i <= c.enc_layers; ++i) {
    const std::string idx = std::to_string(i);
    h = bert_layer(h, layout, s, "enc.layer" + idx, c.dropout, opts);
    detail::trace_event(opts, "enc.bert" + idx);
    if (std::find(c.enc_adapters.begin(), c.enc_adapters.end(), i) != c.enc_adapters.end()) {
      h = encoder_adapter(h, s, "enc.adapter" + idx);
      detail::trace_event(opts, "enc.adapter" + idx);
    }
  }
  out.hidden = h;
  if (s.has("length_head.w")) {
    std::vector<std::size_t> rows(src.batch);
    for (std::size_t b = 0; b < src.batch; ++b) rows[b] = b * src.len;
    out.length_logits = linear(select_rows(h, rows), s.get("length_head.w"), s.get("length_head.b"));
  }
  return out;
}

inline void check_target_length(const TokenBatch& tgt, const ModelConfig& c) {
  if (tgt.len > c.max_tgt_len) {
    throw LengthError("target length " + std::to_string(tgt.len) + " exceeds L_max " +
                      std::to_string(c.max_tgt_len));
  }
}

/// YBERT stack with cross-attention adapters; logits through the tied target
/// embedding. The self-attention mask follows `c.dec_mask`.
template <class T>
Var<T> decoder_forward(const TokenBatch& tgt, const EncoderOutput<T>& enc,
                       const ParameterStore<T>& s, const ModelConfig& c,
                       const ForwardOptions& opts = {}) {
  check_target_length(tgt, c);
  if (opts.trace) ++opts.trace->decoder_calls;
  Var<T> h = embed(tgt, "dec", s);
  const AttentionLayout self = self_layout(tgt, c.n_heads, c.dec_mask == DecoderMask::causal);
  const AttentionLayout cross = cross_layout(tgt, enc, c.n_heads);
  for (std::size_t i = 1; i <= c.dec_layers; ++i) {
    const std::string idx = std::to_string(i);
    h = bert_layer(h, self, s, "dec.layer" + idx, c.dropout, opts);
    detail::trace_event(opts, "dec.bert" + idx);
    if (std::find(c.dec_adapters.begin(), c.dec_adapters.end(), i) != c.dec_adapters.end()) {
      h = decoder_adapter(h, enc.hidden, cross, s, "dec.adapter" + idx, c.dropout, opts);
      detail::trace_event(opts, "dec.adapter" + idx);
    }
  }
  return matmul_nt(h, s.get("dec.tok_emb"));
}

/// Standard autoregressive decoder trained from scratch. Inputs are shifted
/// right with [BOS]. Each layer: causal self-attention, cross-attention on
/// H_E, FFN, each followed by residual and layer norm.
template <class T>
Var<T> transformer_ar_decoder_forward(const TokenBatch& tgt, const EncoderOutput<T>& enc,
                                      const ParameterStore<T>& s, const ModelConfig& c,
                                      const ForwardOptions& opts = {}) {
  if (c.dec_kind != DecoderKind::transformer_ar) {
    throw ContractError("transformer_ar_decoder_forward requires dec_kind transformer-ar");
  }
  check_target_length(tgt, c);
  if (opts.trace) ++opts.trace->decoder_calls;
  Var<T> h = embed(tgt, "ar", s);
  const AttentionLayout self = self_layout(tgt, c.n_heads, true);
  const AttentionLayout cross = cross_layout(tgt, enc, c.n_heads);
  for (std::size_t i = 1; i <= c.dec_layers; ++i) {
    const std::string p = "ar.layer" + std::to_string(i);
    const Var<T> a = detail::maybe_dropout(multi_head_attention(h, h, self, s, p + ".self"),
                                           c.dropout, opts);
    h = norm(add(h, a), s, p + ".ln1");
    const Var<T> x = detail::maybe_dropout(multi_head_attention(h, enc.hidden, cross, s, p + ".cross"),
                                           c.dropout, opts);
    h = norm(add(h, x), s, p + ".ln2");
    const Var<T> f = detail::maybe_dropout(feed_forward(h, s, p + ".ffn"), c.dropout, opts);
    h = norm(add(h, f), s, p + ".ln3");
    detail::trace_event(opts, p);
  }
  return matmul_nt(h, s.get("ar.tok_emb"));
}

/// Dispatches on the decoder kind.
template <class T>
Var<T> target_logits(const TokenBatch& tgt, const EncoderOutput<T>& enc, const ParameterStore<T>& s,
                     const ModelConfig& c, const ForwardOptions& opts = {}) {
  return c.dec_kind == DecoderKind::transformer_ar ? transformer_ar_decoder_forward(tgt, enc, s, c, opts)
                                                   : decoder_forward(tgt, enc, s, c, opts);
}

// ---------------------------------------------------------------------------
// Parameter construction

namespace build {

template <class T>
void layer_norm_params(ParameterStore<T>& s, const std::string& p, std::size_t d, Partition part) {
  s.add(p + ".gain", Tensor<T>({d}, T{1}), part);
  s.add(p + ".bias", Tensor<T>({d}), part);
}

template <class T>
void attention_params(ParameterStore<T>& s, const std::string& p, std::size_t d, Initializer& init,
                      Partition part, bool zero_output) {
  for (const char* w : {"q", "k", "v", "o"}) {
    const std::string name = std::string(w);
    Tensor<T> weight = (name == "o" && zero_output) ? Tensor<T>({d, d}) : init.xavier<T>(d, d);
    s.add(p + ".w" + name, std::move(weight), part);
    s.add(p + ".b" + name, Tensor<T>({d}), part);
  }
}

template <class T>
void ffn_params(ParameterStore<T>& s, const std::string& p, std::size_t d, std::size_t width,
                Initializer& init, Partition part, bool zero_output) {
  s.add(p + ".w1", init.xavier<T>(d, width), part);
  s.add(p + ".b1", Tensor<T>({width}), part);
  s.add(p + ".w2", zero_output ? Tensor<T>({width, d}) : init.xavier<T>(width, d), part);
  s.add(p + ".b2", Tensor<T>({d}), part);
}

template <class T>
void bert_stack(ParameterStore<T>& s, const std::string& prefix, std::size_t vocab,
                std::size_t positions, std::size_t layers, const ModelConfig& c,
                Initializer& init, Partition part) {
  if (vocab == 0) throw ConfigError(prefix + " vocabulary size must be positive");
  const std::size_t d = c.d_hidden;
  s.add(prefix + ".tok_emb", init.embedding<T>(vocab, d), part);
  s.add(prefix + ".pos_emb", init.embedding<T>(positions, d), part);
  layer_norm_params(s, prefix + ".emb_ln", d, part);
  for (std::size_t i = 1; i <= layers; ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    attention_params(s, p + ".attn", d, init, part, false);
    layer_norm_params(s, p + ".ln1", d, part);
    ffn_params(s, p + ".ffn", d, c.d_ffn, init, part, false);
    layer_norm_params(s, p + ".ln2", d, part);
  }
}

}  // namespace build

/// A single pre-training stack: "enc" (XBERT, source side) or "dec" (YBERT,
/// target side). Names match those of the assembled model.
template <class T = float>
ParameterStore<T> init_backbone(const ModelConfig& c, const std::string& side, std::uint64_t seed) {
  c.validate();
  ParameterStore<T> s;
  Initializer init(seed);
  if (side == "enc") {
    build::bert_stack(s, "enc", c.src_vocab, c.src_positions(), c.enc_layers, c, init,
                      Partition::trainable);
  } else if (side == "dec") {
    build::bert_stack(s, "dec", c.tgt_vocab, c.tgt_positions(), c.dec_layers, c, init,
                      Partition::trainable);
  } else {
    throw ConfigError("backbone side must be enc or dec, got '" + side + "'");
  }
  return s;
}

/// Randomly initialized sequence-to-sequence model. Adapter output
/// projections start at zero; backbone tensors are FROZEN and everything
/// else TRAINABLE (the adapters-only partition).
template <class T = float>
ParameterStore<T> init_model(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ParameterStore<T> s;
  Initializer init(seed);
  const std::size_t d = c.d_hidden;
  build::bert_stack(s, "enc", c.src_vocab, c.src_positions(), c.enc_layers, c, init,
                    Partition::frozen);
  s.add("enc.length_emb", Tensor<T>({1, d}), Partition::trainable);
  for (const std::size_t i : c.enc_adapters) {
    const std::string p = "enc.adapter" + std::to_string(i);
    s.add(p + ".w1", init.xavier<T>(d, c.d_aenc), Partition::trainable);
    s.add(p + ".b1", Tensor<T>({c.d_aenc}), Partition::trainable);
    s.add(p + ".w2", Tensor<T>({c.d_aenc, d}), Partition::trainable);
    s.add(p + ".b2", Tensor<T>({d}), Partition::trainable);
  }
  if (c.dec_kind == DecoderKind::adapter_bert) {
    build::bert_stack(s, "dec", c.tgt_vocab, c.tgt_positions(), c.dec_layers, c, init,
                      Partition::frozen);
    for (const std::size_t i : c.dec_adapters) {
      const std::string p = "dec.adapter" + std::to_string(i);
      build::attention_params(s, p + ".attn", d, init, Partition::trainable, true);
      build::layer_norm_params(s, p + ".ln1", d, Partition::trainable);
      build::ffn_params(s, p + ".ffn", d, c.d_adec_ffn, init, Partition::trainable, true);
      build::layer_norm_params(s, p + ".ln2", d, Partition::trainable);
    }
    s.add("length_head.w", init.xavier<T>(d, c.max_tgt_len), Partition::trainable);
    s.add("length_head.b", Tensor<T>({c.max_tgt_len}), Partition::trainable);
  } else {
    const Partition part = Partition::trainable;
    s.add("ar.tok_emb", init.embedding<T>(c.tgt_vocab, d), part);
    s.add("ar.pos_emb", init.embedding<T>(c.tgt_positions(), d), part);
    build::layer_norm_params(s, "ar.emb_ln", d, part);
    for (std::size_t i = 1; i <= c.dec_layers; ++i) {
      const std::string p = "ar.layer" + std::to_string(i);
      build::attention_params(s, p + ".self", d, init, part, false);
      build::layer_norm_params(s, p + ".ln1", d, part);
      build::attention_params(s, p + ".cross", d, init, part, false);
      build::layer_norm_params(s, p + ".ln2", d, part);
      build::ffn_params(s, p + ".ffn", d, c.d_ffn, init, part, false);
      build::layer_norm_params(s, p + ".ln3", d, part);
    }
  }
  // The new [LENGTH] row starts from the [BOS] row, the prefix slot the
  // encoder saw during pre-training.
  const auto& tok = s.get("enc.tok_emb").value();
  s.assign("enc.length_emb", Tensor<T>({1, d}, std::vector<T>(tok.row(kBosId).begin(),
                                                               tok.row(kBosId).end())));
  return s;
}

inline bool is_backbone_name(const std::string& name) {
  return (name.starts_with("enc.") || name.starts_with("dec.")) &&
         name.find(".adapter") == std::string::npos && name != "enc.length_emb";
}

/// Sets the partition for a training mode. Backbone tensors are FROZEN only
/// under finetune-adapters.
template <class T>
void apply_train_mode(ParameterStore<T>& s, TrainMode mode) {
  for (const auto& name : s.names()) {
    const bool frozen = mode == TrainMode::finetune_adapters && is_backbone_name(name);
    s.set_partition(name, frozen ? Partition::frozen : Partition::trainable);
  }
}

/// Copies pre-trained backbone tensors into an assembled model and refreshes
/// the [LENGTH] row from the copied [BOS] row.
template <class T>
void load_backbone(ParameterStore<T>& model, const ParameterStore<T>& backbone) {
  for (const auto& [name, e] : backbone.entries()) {
    if (!model.has(name)) {
      throw ContractError("backbone tensor '" + name + "' has no slot in the model");
    }
    model.assign(name, e.var.value());
  }
  if (backbone.has("enc.tok_emb") && model.has("enc.length_emb")) {
    const auto& tok = backbone.get("enc.tok_emb").value();
    const auto row = tok.row(kBosId);
    model.assign("enc.length_emb",
                 Tensor<T>({1, tok.cols()}, std::vector<T>(row.begin(), row.end())));
  }
}

}  // namespace abnet

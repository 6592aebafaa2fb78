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
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "abnet/config.hpp"
#include "abnet/model.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

namespace abnet {
namespace {

using testing::random_ids;
using testing::random_tensor;
using testing::randomize;
using testing::tiny_config;
using testing::with_length_prefix;
namespace ref = testing::ref;

ParameterStore<double> tiny_model(const ModelConfig& c, std::uint64_t seed = 3) {
  ParameterStore<double> s = init_model<double>(c, seed);
  return s;
}

TEST(Embed, SameIdAtTwoPositionsDiffers) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  const auto h = embed(TokenBatch::from_sequences({{7, 7}}), "dec", s);
  ASSERT_EQ(h.shape(), (Shape{2, c.d_hidden}));
  EXPECT_NE(ref::row(h.value(), 0), ref::row(h.value(), 1));
}

TEST(Embed, ZeroLengthGivesZeroRows) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  const auto h = embed(TokenBatch::from_sequences({{}}), "dec", s);
  EXPECT_EQ(h.shape(), (Shape{0, c.d_hidden}));
}

TEST(Embed, RowsAreNormalized) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  const auto h = embed(TokenBatch::from_sequences({{6, 8, 9, 10}}), "dec", s);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto row = ref::row(h.value(), r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0) / row.size(), 0.0, 1e-9);
  }
}

TEST(Embed, OverlongSequenceIsLengthError) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  std::vector<int> ids(c.max_tgt_len + 1, 6);
  EXPECT_THROW(embed(TokenBatch::from_sequences({ids}), "dec", s), LengthError);
}

TEST(BertLayer, SingleTokenAttentionIsValueProjection) {
  const ModelConfig c = tiny_config();
  auto s = tiny_model(c);
  randomize(s, 4);
  std::mt19937 rng(1);
  const auto x = Var<double>::constant(random_tensor({1, c.d_hidden}, rng));
  const TokenBatch one = TokenBatch::from_sequences({{6}});
  const auto out = multi_head_attention(x, x, self_layout(one, c.n_heads, false), s, "enc.layer1.attn");
  const auto v = ref::affine(ref::row(x.value(), 0), s.get("enc.layer1.attn.wv").value(),
                             s.get("enc.layer1.attn.bv").value());
  const auto expect = ref::affine(v, s.get("enc.layer1.attn.wo").value(),
                                  s.get("enc.layer1.attn.bo").value());
  for (std::size_t j = 0; j < c.d_hidden; ++j) EXPECT_NEAR(out.value()(0, j), expect[j], 1e-12);
}

TEST(BertLayer, PermutationEquivariantWithoutPositions) {
  const ModelConfig c = tiny_config();
  auto s = tiny_model(c);
  randomize(s, 5);
  std::mt19937 rng(2);
  const std::size_t L = 5;
  const auto h = random_tensor({L, c.d_hidden}, rng);
  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor<double> hp({L, c.d_hidden});
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < c.d_hidden; ++j) hp(i, j) = h(perm[i], j);
  }
  AttentionLayout layout;
  layout.query_len = L;
  layout.key_len = L;
  layout.heads = c.n_heads;
  const auto out = bert_layer(Var<double>::constant(h), layout, s, "enc.layer1").value();
  const auto outp = bert_layer(Var<double>::constant(hp), layout, s, "enc.layer1").value();
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < c.d_hidden; ++j) EXPECT_NEAR(outp(i, j), out(perm[i], j), 1e-12);
  }
}

TEST(BertLayer, MaskedKeyHasNoInfluence) {
  const ModelConfig c = tiny_config();
  auto s = tiny_model(c);
  randomize(s, 6);
  std::mt19937 rng(3);
  const std::size_t L = 4;
  auto mask = std::make_shared<std::vector<double>>(L * L, 0.0);
  (*mask)[0 * L + 2] = -std::numeric_limits<double>::infinity();
  AttentionLayout layout;
  layout.query_len = L;
  layout.key_len = L;
  layout.heads = c.n_heads;
  layout.additive = mask;
  auto h = random_tensor({L, c.d_hidden}, rng);
  const auto base = bert_layer(Var<double>::constant(h), layout, s, "enc.layer1").value();
  for (std::size_t j = 0; j < c.d_hidden; ++j) h(2, j) += 3.0;
  const auto moved = bert_layer(Var<double>::constant(h), layout, s, "enc.layer1").value();
  EXPECT_EQ(ref::row(base, 0), ref::row(moved, 0));
  EXPECT_NE(ref::row(base, 1), ref::row(moved, 1));
}

TEST(BertLayer, FullyMaskedRowIsNumericError) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  auto mask = std::make_shared<std::vector<double>>(4, -std::numeric_limits<double>::infinity());
  AttentionLayout layout;
  layout.query_len = 2;
  layout.key_len = 2;
  layout.heads = c.n_heads;
  layout.additive = mask;
  std::mt19937 rng(4);
  EXPECT_THROW(bert_layer(Var<double>::constant(random_tensor({2, c.d_hidden}, rng)), layout, s,
                          "enc.layer1"),
               NumericError);
}

ParameterStore<double> adapter_store(std::size_t d, std::size_t bottleneck, std::mt19937& rng) {
  ParameterStore<double> s;
  s.add("a.w1", random_tensor({d, bottleneck}, rng), Partition::trainable);
  s.add("a.b1", random_tensor({bottleneck}, rng), Partition::trainable);
  s.add("a.w2", random_tensor({bottleneck, d}, rng), Partition::trainable);
  s.add("a.b2", random_tensor({d}, rng), Partition::trainable);
  return s;
}

TEST(EncoderAdapter, ZeroW2IsExactIdentity) {
  std::mt19937 rng(5);
  auto s = adapter_store(8, 4, rng);
  s.assign("a.w2", Tensor<double>({4, 8}));
  s.assign("a.b2", Tensor<double>({8}));
  const auto h = Var<double>::constant(random_tensor({3, 8}, rng));
  EXPECT_EQ(encoder_adapter(h, s, "a").value(), h.value());
}

TEST(EncoderAdapter, ScalarBottleneckByHand) {
  ParameterStore<double> s;
  s.add("a.w1", Tensor<double>({4, 1}, {1.0, -2.0, 0.5, 3.0}), Partition::trainable);
  s.add("a.b1", Tensor<double>({1}, {0.25}), Partition::trainable);
  s.add("a.w2", Tensor<double>({1, 4}, {2.0, -1.0, 0.0, 0.5}), Partition::trainable);
  s.add("a.b2", Tensor<double>({4}, {0.1, 0.2, 0.3, 0.4}), Partition::trainable);
  const std::vector<double> h = {1.0, 2.0, 3.0, 4.0};
  // mean 2.5, variance 1.25
  const double sd = std::sqrt(1.25 + 1e-5);
  const double ln[4] = {-1.5 / sd, -0.5 / sd, 0.5 / sd, 1.5 / sd};
  const double z = ln[0] * 1.0 + ln[1] * -2.0 + ln[2] * 0.5 + ln[3] * 3.0 + 0.25;
  const double r = std::max(z, 0.0);
  const double expect[4] = {1.0 + 2.0 * r + 0.1, 2.0 - r + 0.2, 3.0 + 0.3, 4.0 + 0.5 * r + 0.4};
  const auto out = encoder_adapter(Var<double>::constant(Tensor<double>({1, 4}, h)), s, "a");
  ASSERT_GT(z, 0.0);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.value()[j], expect[j], 1e-12);
}

TEST(EncoderAdapter, GradientsOfAllFourParameters) {
  std::mt19937 rng(6);
  auto s = adapter_store(6, 3, rng);
  const auto h = Var<double>::leaf(random_tensor({4, 6}, rng), true);
  const auto w = Var<double>::constant(random_tensor({4, 6}, rng));
  auto loss = [&] { return sum(mul(encoder_adapter(h, s, "a"), w)); };
  const auto r = testing::grad_check(loss, {{"w1", s.get("a.w1")}, {"b1", s.get("a.b1")},
                                            {"w2", s.get("a.w2")}, {"b2", s.get("a.b2")},
                                            {"h", h}});
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(EncoderForward, MissingLengthPrefixIsContractError) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  EXPECT_THROW(encoder_forward(TokenBatch::from_sequences({{6, 7}}), s, c), ContractError);
}

TEST(EncoderForward, FreshAdaptersMatchPlainStackBitwise) {
  ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  std::mt19937 rng(7);
  const auto src = TokenBatch::from_sequences(
      {with_length_prefix(random_ids(5, c.src_vocab, rng)), with_length_prefix(random_ids(3, c.src_vocab, rng))});
  const auto with = encoder_forward(src, s, c);
  ModelConfig plain = c;
  plain.enc_adapters.clear();
  const auto without = encoder_forward(src, s, plain);
  EXPECT_EQ(with.hidden.value(), without.hidden.value());
  EXPECT_EQ(with.length_logits.value(), without.length_logits.value());
}

TEST(EncoderForward, TopSixPlacementOnTwelveLayers) {
  ModelConfig c = tiny_config();
  c.enc_layers = 12;
  c.enc_adapters = parse_layer_set("top:6", 12);
  EXPECT_EQ(c.enc_adapters, (std::vector<std::size_t>{7, 8, 9, 10, 11, 12}));
  const auto s = tiny_model(c);
  ForwardTrace trace;
  ForwardOptions opts;
  opts.trace = &trace;
  encoder_forward(TokenBatch::from_sequences({{kLengthId, 6, 7}}), s, c, opts);
  std::vector<std::string> expect;
  for (int i = 1; i <= 12; ++i) {
    expect.push_back("enc.bert" + std::to_string(i));
    if (i >= 7) expect.push_back("enc.adapter" + std::to_string(i));
  }
  EXPECT_EQ(trace.events, expect);
}

TEST(EncoderForward, LengthLogitsShape) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  const auto out = encoder_forward(TokenBatch::from_sequences({{kLengthId, 6}, {kLengthId, 7, 8}}), s, c);
  EXPECT_EQ(out.length_logits.shape(), (Shape{2, c.max_tgt_len}));
  EXPECT_EQ(out.hidden.shape(), (Shape{6, c.d_hidden}));
}

EncoderOutput<double> constant_encoder(const Tensor<double>& h, std::size_t batch, std::size_t len,
                                       std::vector<std::size_t> lengths) {
  EncoderOutput<double> e;
  e.hidden = Var<double>::constant(h);
  e.batch = batch;
  e.len = len;
  e.lengths = std::move(lengths);
  return e;
}

TEST(DecoderAdapter, SingleEncoderVectorCollapsesAttention) {
  const ModelConfig c = tiny_config();
  auto s = tiny_model(c);
  randomize(s, 8);
  std::mt19937 rng(8);
  const auto enc = constant_encoder(random_tensor({1, c.d_hidden}, rng), 1, 1, {1});
  const auto tgt = TokenBatch::from_sequences({{6, 7, 8}});
  const auto y = Var<double>::constant(random_tensor({3, c.d_hidden}, rng));
  const auto a = multi_head_attention(y, enc.hidden, cross_layout(tgt, enc, c.n_heads), s,
                                      "dec.adapter2.attn");
  const auto v = ref::affine(ref::row(enc.hidden.value(), 0), s.get("dec.adapter2.attn.wv").value(),
                             s.get("dec.adapter2.attn.bv").value());
  const auto expect = ref::affine(v, s.get("dec.adapter2.attn.wo").value(),
                                  s.get("dec.adapter2.attn.bo").value());
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < c.d_hidden; ++j) EXPECT_NEAR(a.value()(i, j), expect[j], 1e-12);
  }
}

TEST(DecoderAdapter, ZeroInitIsDoubleLayerNorm) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  std::mt19937 rng(9);
  const auto enc = constant_encoder(random_tensor({4, c.d_hidden}, rng), 1, 4, {4});
  const auto tgt = TokenBatch::from_sequences({{6, 7, 8}});
  const auto y = Var<double>::constant(random_tensor({3, c.d_hidden}, rng));
  const auto out = decoder_adapter(y, enc.hidden, cross_layout(tgt, enc, c.n_heads), s, "dec.adapter2");
  const auto twice = layer_norm<double>(layer_norm<double>(y, {}, {}, kLayerNormEps), {}, {}, kLayerNormEps);
  EXPECT_EQ(out.value(), twice.value());
}

TEST(DecoderAdapter, PaddedEncoderPositionsHaveNoInfluence) {
  const ModelConfig c = tiny_config();
  auto s = tiny_model(c);
  randomize(s, 10);
  std::mt19937 rng(10);
  auto h = random_tensor({5, c.d_hidden}, rng);
  const auto tgt = TokenBatch::from_sequences({{6, 7}});
  const auto y = Var<double>::constant(random_tensor({2, c.d_hidden}, rng));
  auto run = [&] {
    const auto enc = constant_encoder(h, 1, 5, {3});
    return decoder_adapter(y, enc.hidden, cross_layout(tgt, enc, c.n_heads), s, "dec.adapter2").value();
  };
  const auto base = run();
  for (std::size_t j = 0; j < c.d_hidden; ++j) {
    h(3, j) = 100.0;
    h(4, j) = -7.0 * static_cast<double>(j);
  }
  EXPECT_EQ(run(), base);
}

TEST(DecoderAdapter, AllPaddingEncoderIsNumericError) {
  const ModelConfig c = tiny_config();
  const auto s = tiny_model(c);
  std::mt19937 rng(11);
  const auto enc = constant_encoder(random_tensor({2, c.d_hidden}, rng), 1, 2, {0});
  const auto tgt = TokenBatch::from_sequences({{6}});
  const auto y = Var<double>::constant(random_tensor({1, c.d_hidden}, rng));
  EXPECT_THROW(decoder_adapter(y, enc.hidden, cross_layout(tgt, enc, c.n_heads), s, "dec.adapter2"),
               NumericError);
}

struct DecoderCase {
  ModelConfig config;
  ParameterStore<double> store;
  EncoderOutput<double> enc;
};

DecoderCase decoder_case(DecoderMask mask, DecoderKind kind, std::uint64_t seed) {
  ModelConfig c = tiny_config();
  c.dec_mask = mask;
  c.dec_kind = kind;
  auto s = init_model<double>(c, seed);
  randomize(s, seed + 100);
  std::mt19937 rng(static_cast<unsigned>(seed));
  const auto src = TokenBatch::from_sequences({with_length_prefix(random_ids(4, c.src_vocab, rng))});
  auto enc = encoder_forward(src, s, c);
  return {c, std::move(s), std::move(enc)};
}

TEST(DecoderForward, BidirectionalPositionSeesLaterInputs) {
  auto k = decoder_case(DecoderMask::bidirectional, DecoderKind::adapter_bert, 12);
  std::vector<int> y = {6, 7, 8, 9, 10};
  const auto a = decoder_forward(TokenBatch::from_sequences({y}), k.enc, k.store, k.config).value();
  y[3] = kMaskId;
  const auto b = decoder_forward(TokenBatch::from_sequences({y}), k.enc, k.store, k.config).value();
  EXPECT_NE(ref::row(a, 0), ref::row(b, 0));
  EXPECT_EQ(a.cols(), k.config.tgt_vocab);
}

void expect_causal(DecoderKind kind, std::uint64_t seed) {
  auto k = decoder_case(DecoderMask::causal, kind, seed);
  std::mt19937 rng(static_cast<unsigned>(seed));
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> y = random_ids(6, k.config.tgt_vocab, rng);
    y[0] = kBosId;
    const std::size_t i = rng() % 5;
    const auto a = target_logits(TokenBatch::from_sequences({y}), k.enc, k.store, k.config).value();
    for (std::size_t j = i + 1; j < y.size(); ++j) y[j] = random_ids(1, k.config.tgt_vocab, rng)[0];
    const auto b = target_logits(TokenBatch::from_sequences({y}), k.enc, k.store, k.config).value();
    for (std::size_t r = 0; r <= i; ++r) ASSERT_EQ(ref::row(a, r), ref::row(b, r)) << trial;
  }
}

TEST(DecoderForward, CausalModeIgnoresFutureInputsExactly) {
  expect_causal(DecoderKind::adapter_bert, 13);
}

TEST(DecoderForward, OverlongTargetIsLengthError) {
  auto k = decoder_case(DecoderMask::bidirectional, DecoderKind::adapter_bert, 14);
  std::vector<int> y(k.config.max_tgt_len + 1, 6);
  EXPECT_THROW(decoder_forward(TokenBatch::from_sequences({y}), k.enc, k.store, k.config), LengthError);
}

TEST(DecoderForward, StackOrderIsBertThenAdapter) {
  ModelConfig c = tiny_config();
  c.dec_layers = 4;
  c.dec_adapters = {1, 3, 4};
  const auto s = init_model<double>(c, 2);
  const auto enc = encoder_forward(TokenBatch::from_sequences({{kLengthId, 6}}), s, c);
  ForwardTrace trace;
  ForwardOptions opts;
  opts.trace = &trace;
  decoder_forward(TokenBatch::from_sequences({{6, 7}}), enc, s, c, opts);
  EXPECT_EQ(trace.events, (std::vector<std::string>{"dec.bert1", "dec.adapter1", "dec.bert2", "dec.bert3",
                                                    "dec.adapter3", "dec.bert4", "dec.adapter4"}));
  EXPECT_EQ(trace.decoder_calls, 1u);
}

TEST(DecoderForward, HeadIsTiedToTargetEmbedding) {
  const ModelConfig c = tiny_config();
  auto s = init_model<double>(c, 3);
  for (const auto& name : s.names()) {
    EXPECT_FALSE(name.find("head") != std::string::npos && !name.starts_with("length_head")) << name;
  }
  apply_train_mode(s, TrainMode::finetune_full);
  const auto enc = encoder_forward(TokenBatch::from_sequences({{kLengthId, 6}}), s, c);
  const std::vector<int> y = {6, 6};
  const auto logits = decoder_forward(TokenBatch::from_sequences({y}), enc, s, c);
  const std::vector<int> targets = {9, 9};
  backward(cross_entropy(logits, std::span<const int>(targets)));
  // Row 9 never enters as input, so its gradient comes from the output head.
  const auto& g = s.get("dec.tok_emb").grad();
  double norm = 0.0;
  for (std::size_t j = 0; j < c.d_hidden; ++j) norm += std::abs(g(9, j));
  EXPECT_GT(norm, 0.0);
}

TEST(TransformerArDecoder, CausalityIsExact) { expect_causal(DecoderKind::transformer_ar, 15); }

TEST(TransformerArDecoder, SingleLayerByHand) {
  ModelConfig c = tiny_config();
  c.d_hidden = 4;
  c.n_heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.enc_adapters = {1};
  c.dec_adapters.clear();
  c.dec_kind = DecoderKind::transformer_ar;
  auto s = init_model<double>(c, 4);
  randomize(s, 40);
  const auto enc = encoder_forward(TokenBatch::from_sequences({{kLengthId}}), s, c);
  const auto logits =
      transformer_ar_decoder_forward(TokenBatch::from_sequences({{kBosId}}), enc, s, c).value();

  auto W = [&](const std::string& n) -> const Tensor<double>& { return s.get(n).value(); };
  auto LN = [&](const ref::Vec& x, const std::string& p) {
    return ref::layer_norm(x, &W(p + ".gain"), &W(p + ".bias"));
  };
  const std::string p = "ar.layer1";
  const auto x = LN(ref::plus(ref::row(W("ar.tok_emb"), kBosId), ref::row(W("ar.pos_emb"), 0)), "ar.emb_ln");
  const auto self_v = ref::affine(x, W(p + ".self.wv"), W(p + ".self.bv"));
  const auto h1 = LN(ref::plus(x, ref::affine(self_v, W(p + ".self.wo"), W(p + ".self.bo"))), p + ".ln1");
  const auto e = ref::row(enc.hidden.value(), 0);
  const auto cross_v = ref::affine(e, W(p + ".cross.wv"), W(p + ".cross.bv"));
  const auto h2 = LN(ref::plus(h1, ref::affine(cross_v, W(p + ".cross.wo"), W(p + ".cross.bo"))), p + ".ln2");
  const auto f = ref::affine(ref::relu(ref::affine(h2, W(p + ".ffn.w1"), W(p + ".ffn.b1"))), W(p + ".ffn.w2"),
                             W(p + ".ffn.b2"));
  const auto h3 = LN(ref::plus(h2, f), p + ".ln3");
  ASSERT_EQ(logits.shape(), (Shape{1, c.tgt_vocab}));
  for (std::size_t v = 0; v < c.tgt_vocab; ++v) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 4; ++j) expect += h3[j] * W("ar.tok_emb")(v, j);
    EXPECT_NEAR(logits(0, v), expect, 1e-12);
  }
}

TEST(TransformerArDecoder, CrossAttentionIgnoresEncoderPadding) {
  auto k = decoder_case(DecoderMask::causal, DecoderKind::transformer_ar, 16);
  std::mt19937 rng(16);
  auto h = random_tensor({6, k.config.d_hidden}, rng);
  const auto tgt = TokenBatch::from_sequences({{kBosId, 6, 7}});
  const auto base =
      transformer_ar_decoder_forward(tgt, constant_encoder(h, 1, 6, {4}), k.store, k.config).value();
  for (std::size_t j = 0; j < k.config.d_hidden; ++j) h(4, j) = h(5, j) = 50.0;
  const auto moved =
      transformer_ar_decoder_forward(tgt, constant_encoder(h, 1, 6, {4}), k.store, k.config).value();
  EXPECT_EQ(base, moved);
}

TEST(Partition, AdaptersOnlyRatioOnDeskDefault) {
  ModelConfig c;
  c.src_vocab = 30;
  c.tgt_vocab = 30;
  auto s = init_model<float>(c, 1);
  const double ratio = static_cast<double>(s.count(Partition::trainable)) / s.total();
  EXPECT_LT(ratio, 0.25);
  for (const auto& [name, e] : s.entries()) {
    const bool trainable = name.find("adapter") != std::string::npos || name.starts_with("length_head") ||
                           name == "enc.length_emb";
    EXPECT_EQ(e.partition == Partition::trainable, trainable) << name;
  }
}

TEST(Partition, FullModeHasNoFrozenTensors) {
  ModelConfig c = tiny_config();
  auto s = init_model<float>(c, 1);
  apply_train_mode(s, TrainMode::finetune_full);
  EXPECT_EQ(s.count(Partition::frozen), 0u);
  apply_train_mode(s, TrainMode::finetune_adapters);
  EXPECT_GT(s.count(Partition::frozen), 0u);
  EXPECT_FALSE(s.get("enc.tok_emb").requires_grad());
  EXPECT_TRUE(s.get("enc.adapter1.w1").requires_grad());
}

TEST(Partition, LengthRowStartsFromBosRow) {
  const ModelConfig c = tiny_config();
  auto backbone = init_backbone<float>(c, "enc", 77);
  auto s = init_model<float>(c, 1);
  load_backbone(s, backbone);
  const auto& tok = s.get("enc.tok_emb").value();
  const auto row = s.get("enc.length_emb").value();
  for (std::size_t j = 0; j < c.d_hidden; ++j) EXPECT_EQ(row[j], tok(kBosId, j));
  EXPECT_EQ(tok, backbone.get("enc.tok_emb").value());
}

}  // namespace
}  // namespace abnet

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

// Small model configs and plain-loop reference math shared by the tests.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "abnet/config.hpp"
#include "abnet/model.hpp"
#include "abnet/params.hpp"

namespace abnet::testing {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.src_vocab = 12;
  c.tgt_vocab = 11;
  c.d_hidden = 8;
  c.n_heads = 2;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.d_ffn = 16;
  c.d_aenc = 4;
  c.d_adec_ffn = 12;
  c.enc_adapters = {1, 2};
  c.dec_adapters = {2};
  c.max_src_len = 8;
  c.max_tgt_len = 8;
  return c;
}

/// Overwrites every tensor in `names` (all tensors when empty) with uniform
/// noise, so zero-initialized adapter paths become active.
template <class T>
void randomize(ParameterStore<T>& s, std::uint64_t seed, double scale = 0.5,
               const std::vector<std::string>& names = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (const auto& name : names.empty() ? s.names() : names) {
    Tensor<T> t = s.get(name).value();
    for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
    s.assign(name, t);
  }
}

inline std::vector<int> random_ids(std::size_t n, std::size_t vocab, std::mt19937& rng) {
  std::uniform_int_distribution<int> dist(kNumSpecialTokens, static_cast<int>(vocab) - 1);
  std::vector<int> ids(n);
  for (auto& id : ids) id = dist(rng);
  return ids;
}

inline std::vector<int> with_length_prefix(std::vector<int> ids) {
  ids.insert(ids.begin(), kLengthId);
  return ids;
}

namespace ref {

using Vec = std::vector<double>;

// x (1 x n) times W (n x m) plus b.
inline Vec affine(const Vec& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t n = w.shape()[0], m = w.shape()[1];
  Vec y(m);
  for (std::size_t j = 0; j < m; ++j) {
    double acc = b.size() ? b[j] : 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * w(i, j);
    y[j] = acc;
  }
  return y;
}

inline Vec layer_norm(const Vec& x, const Tensor<double>* gain = nullptr,
                      const Tensor<double>* bias = nullptr, double eps = 1e-5) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = (x[i] - mean) / std::sqrt(var + eps);
    if (gain) y[i] = y[i] * (*gain)[i] + (*bias)[i];
  }
  return y;
}

inline Vec plus(const Vec& a, const Vec& b) {
  Vec y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

inline Vec relu(Vec x) {
  for (auto& v : x) v = v > 0.0 ? v : 0.0;
  return x;
}

inline Vec row(const Tensor<double>& t, std::size_t r) {
  return Vec(t.row(r).begin(), t.row(r).end());
}

}  // namespace ref

}  // namespace abnet::testing

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

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "abnet/autodiff.hpp"
#include "abnet/tensor.hpp"

namespace abnet {

namespace kernel {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<RowMatrix<T>> view(T* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <class T>
Eigen::Map<const RowMatrix<T>> view(const T* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

// c (+)= op(a) * op(b) where op(a) is (n, k) and op(b) is (k, m).
template <class T>
void gemm(const T* a, bool trans_a, const T* b, bool trans_b, T* c, std::size_t n,
          std::size_t k, std::size_t m, bool accumulate) {
  auto C = view(c, n, m);
  if (n == 0 || m == 0) return;
  if (k == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  const auto A = trans_a ? view(a, k, n) : view(a, n, k);
  const auto B = trans_b ? view(b, m, k) : view(b, k, m);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      C.noalias() += lhs * rhs;
    } else {
      C.noalias() = lhs * rhs;
    }
  };
  if (trans_a && trans_b) {
    run(A.transpose(), B.transpose());
  } else if (trans_a) {
    run(A.transpose(), B);
  } else if (trans_b) {
    run(A, B.transpose());
  } else {
    run(A, B);
  }
}

}  // namespace kernel

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  check_finite(out, "add");
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  check_finite(out, "mul");
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  check_finite(out, "scale");
  return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T total{0};
  for (const T v : x.value().values()) total += v;
  Tensor<T> out({1}, total);
  check_finite(out, "sum");
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (auto& v : g.storage()) v += up;
  });
}

/// Matrix product. Rank-2 (n,k)x(k,m) or batched rank-3 (b,n,k)x(b,k,m).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.size() == 3 && sb.size() == 3;
  const bool plain = sa.size() == 2 && sb.size() == 2;
  std::size_t batch = 1, n = 0, k = 0, m = 0;
  if (plain && sa[1] == sb[0]) {
    n = sa[0], k = sa[1], m = sb[1];
  } else if (batched && sa[0] == sb[0] && sa[2] == sb[1]) {
    batch = sa[0], n = sa[1], k = sa[2], m = sb[2];
  } else {
    throw DimensionError("matmul: incompatible shapes " + shape_string(sa) +
                         " and " + shape_string(sb));
  }
  Tensor<T> out(batched ? Shape{batch, n, m} : Shape{n, m});
  for (std::size_t i = 0; i < batch; ++i) {
    kernel::gemm(a.value().data() + i * n * k, false, b.value().data() + i * k * m,
                 false, out.data() + i * n * m, n, k, m, false);
  }
  check_finite(out, "matmul");
  return make_result<T>(std::move(out), {a, b}, [batch, n, k, m](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    for (std::size_t i = 0; i < batch; ++i) {
      const T* dc = self.grad.data() + i * n * m;
      if (pa.requires_grad) {
        kernel::gemm(dc, false, pb.value.data() + i * k * m, true,
                     pa.grad_buffer().data() + i * n * k, n, m, k, true);
      }
      if (pb.requires_grad) {
        kernel::gemm(pa.value.data() + i * n * k, true, dc, false,
                     pb.grad_buffer().data() + i * k * m, k, n, m, true);
      }
    }
  });
}

/// a * b^T for a (n,k), b (m,k). Used by the tied output head.
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_string(sa) +
                         " and " + shape_string(sb));
  }
  const std::size_t n = sa[0], k = sa[1], m = sb[0];
  Tensor<T> out({n, m});
  kernel::gemm(a.value().data(), false, b.value().data(), true, out.data(), n, k, m,
               false);
  check_finite(out, "matmul_nt");
  return make_result<T>(std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      kernel::gemm(self.grad.data(), false, pb.value.data(), false,
                   pa.grad_buffer().data(), n, m, k, true);
    }
    if (pb.requires_grad) {
      kernel::gemm(self.grad.data(), true, pa.value.data(), false,
                   pb.grad_buffer().data(), m, n, k, true);
    }
  });
}

/// x (rows, in) * w (in, out) + bias (out). `bias` may be null.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {}) {
  const Shape& sw = w.shape();
  if (sw.size() != 2 || x.value().cols() != sw[0] || x.shape().size() != 2) {
    throw DimensionError("linear: input " + shape_string(x.shape()) +
                         " does not match weight " + shape_string(sw));
  }
  if (bias && (bias.shape().size() != 1 || bias.shape()[0] != sw[1])) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) +
                         " does not match weight " + shape_string(sw));
  }
  const std::size_t n = x.shape()[0], k = sw[0], m = sw[1];
  Tensor<T> out({n, m});
  kernel::gemm(x.value().data(), false, w.value().data(), false, out.data(), n, k, m,
               false);
  if (bias) {
    const T* b = bias.value().data();
    for (std::size_t r = 0; r < n; ++r) {
      T* row = out.data() + r * m;
      for (std::size_t c = 0; c < m; ++c) row[c] += b[c];
    }
  }
  check_finite(out, "linear");
  std::vector<Var<T>> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents), [n, k, m](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    if (px.requires_grad) {
      kernel::gemm(self.grad.data(), false, pw.value.data(), true,
                   px.grad_buffer().data(), n, m, k, true);
    }
    if (pw.requires_grad) {
      kernel::gemm(px.value.data(), true, self.grad.data(), false,
                   pw.grad_buffer().data(), k, n, m, true);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      T* gb = self.parents[2]->grad_buffer().data();
      for (std::size_t r = 0; r < n; ++r) {
        const T* row = self.grad.data() + r * m;
        for (std::size_t c = 0; c < m; ++c) gb[c] += row[c];
      }
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    auto& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (px.value[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

/// Normalizes over the last extent. `gain`/`bias` may both be null for a
/// parameter-free normalization.
template <class T>
Var<T> layer_norm(const Var<T>& h, const Var<T>& gain, const Var<T>& bias, double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  if (static_cast<bool>(gain) != static_cast<bool>(bias)) {
    throw ContractError("layer_norm: gain and bias must be given together");
  }
  const std::size_t d = h.value().cols();
  const std::size_t rows = h.value().rows();
  if (gain && (gain.value().size() != d || bias.value().size() != d)) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) +
                         " do not match last extent of " + shape_string(h.shape()));
  }
  Tensor<T> out(h.shape());
  auto normalized = std::make_shared<std::vector<T>>(h.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const T* x = h.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean{0};
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[r] = rstd;
    T* nr = normalized->data() + r * d;
    T* yr = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      nr[c] = (xr[c] - mean) * rstd;
      yr[c] = gain ? nr[c] * gain.value()[c] + bias.value()[c] : nr[c];
    }
  }
  check_finite(out, "layer_norm");
  std::vector<Var<T>> parents{h};
  if (gain) {
    parents.push_back(gain);
    parents.push_back(bias);
  }
  return make_result<T>(
      std::move(out), std::move(parents), [rows, d, normalized, inv_std](Node<T>& self) {
        const bool affine = self.parents.size() == 3;
        Node<T>& ph = *self.parents[0];
        const T* g = affine ? self.parents[1]->value.data() : nullptr;
        std::vector<T> dn(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* up = self.grad.data() + r * d;
          const T* nr = normalized->data() + r * d;
          if (affine && self.parents[1]->requires_grad) {
            T* gg = self.parents[1]->grad_buffer().data();
            for (std::size_t c = 0; c < d; ++c) gg[c] += up[c] * nr[c];
          }
          if (affine && self.parents[2]->requires_grad) {
            T* gb = self.parents[2]->grad_buffer().data();
            for (std::size_t c = 0; c < d; ++c) gb[c] += up[c];
          }
          if (!ph.requires_grad) continue;
          T mean_dn{0}, mean_dn_n{0};
          for (std::size_t c = 0; c < d; ++c) {
            dn[c] = affine ? up[c] * g[c] : up[c];
            mean_dn += dn[c];
            mean_dn_n += dn[c] * nr[c];
          }
          mean_dn /= static_cast<T>(d);
          mean_dn_n /= static_cast<T>(d);
          T* gx = ph.grad_buffer().data() + r * d;
          const T rstd = (*inv_std)[r];
          for (std::size_t c = 0; c < d; ++c) {
            gx[c] += rstd * (dn[c] - mean_dn - nr[c] * mean_dn_n);
          }
        }
      });
}

/// Softmax along `axis` with max subtraction. Entries of -inf are allowed and
/// map to 0; a slice that is entirely -inf is an error.
template <class T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor<T> out(s);
  const T* in = x.value().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const T v = in[base + j * inner];
        if (std::isnan(v) || v == std::numeric_limits<T>::infinity()) {
          throw NumericError("softmax: non-finite input");
        }
        mx = std::max(mx, v);
      }
      if (mx == -std::numeric_limits<T>::infinity()) {
        throw NumericError("softmax: fully masked slice");
      }
      T total{0};
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<T>(std::move(out), {x}, [outer, inner, n](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T* y = self.value.data();
    const T* up = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * up[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t at = base + j * inner;
          g[at] += y[at] * (up[at] - dot);
        }
      }
    }
  });
}

/// Mean negative log-likelihood over rows whose `ignore` flag is 0.
/// `logits` is (rows, classes); log-softmax is fused.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets,
                     std::span<const std::uint8_t> ignore = {}) {
  const std::size_t rows = logits.value().rows();
  const std::size_t classes = logits.value().cols();
  if (targets.size() != rows || (!ignore.empty() && ignore.size() != rows)) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  auto active = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!ignore.empty() && ignore[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[r]) +
                           " outside " + std::to_string(classes) + " classes");
    }
    active->push_back(r);
  }
  if (active->empty()) throw DataError("cross_entropy: no positions to score");

  auto probs = std::make_shared<std::vector<T>>(active->size() * classes);
  auto target_ids = std::make_shared<std::vector<int>>();
  const T* x = logits.value().data();
  T total{0};
  for (std::size_t a = 0; a < active->size(); ++a) {
    const std::size_t r = (*active)[a];
    const T* row = x + r * classes;
    const T mx = *std::max_element(row, row + classes);
    T z{0};
    T* p = probs->data() + a * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(row[c] - mx);
      z += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= z;
    total += std::log(z) + mx - row[targets[r]];
    target_ids->push_back(targets[r]);
  }
  const T count = static_cast<T>(active->size());
  Tensor<T> out({1}, total / count);
  check_finite(out, "cross_entropy");
  return make_result<T>(
      std::move(out), {logits}, [active, probs, target_ids, classes, count](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T up = self.grad[0] / count;
        for (std::size_t a = 0; a < active->size(); ++a) {
          T* gr = g.data() + (*active)[a] * classes;
          const T* p = probs->data() + a * classes;
          for (std::size_t c = 0; c < classes; ++c) gr[c] += up * p[c];
          gr[(*target_ids)[a]] -= up;
        }
      });
}

/// Row gather from an embedding table (vocab, d). Ids equal to
/// `override_id` read from the single-row `override_row` instead.
template <class T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids,
                 const Var<T>& override_row = {}, int override_id = -1) {
  if (table.shape().size() != 2) {
    throw DimensionError("embedding: table must be rank 2, got " +
                         shape_string(table.shape()));
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  if (override_row && override_row.value().size() != d) {
    throw DimensionError("embedding: override row " +
                         shape_string(override_row.shape()) + " does not match width " +
                         std::to_string(d));
  }
  auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  Tensor<T> out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(vocab));
    }
    const T* src = (override_row && id == override_id)
                       ? override_row.value().data()
                       : table.value().data() + static_cast<std::size_t>(id) * d;
    std::copy(src, src + d, out.data() + r * d);
  }
  std::vector<Var<T>> parents{table};
  if (override_row) parents.push_back(override_row);
  return make_result<T>(std::move(out), std::move(parents), [idx, d, override_id](Node<T>& self) {
    Node<T>& pt = *self.parents[0];
    Node<T>* po = self.parents.size() > 1 ? self.parents[1].get() : nullptr;
    for (std::size_t r = 0; r < idx->size(); ++r) {
      const int id = (*idx)[r];
      const T* up = self.grad.data() + r * d;
      Node<T>* target = (po && id == override_id) ? po : &pt;
      if (!target->requires_grad) continue;
      T* dst = target == po ? po->grad_buffer().data()
                            : pt.grad_buffer().data() + static_cast<std::size_t>(id) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += up[c];
    }
  });
}

/// Picks rows of a rank-2 tensor.
template <class T>
Var<T> select_rows(const Var<T>& x, std::vector<std::size_t> rows) {
  const std::size_t d = x.value().cols();
  const std::size_t n = x.value().rows();
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(rows));
  Tensor<T> out({idx->size(), d});
  for (std::size_t r = 0; r < idx->size(); ++r) {
    if ((*idx)[r] >= n) {
      throw DimensionError("select_rows: row " + std::to_string((*idx)[r]) +
                           " out of range " + std::to_string(n));
    }
    const T* src = x.value().data() + (*idx)[r] * d;
    std::copy(src, src + d, out.data() + r * d);
  }
  return make_result<T>(std::move(out), {x}, [idx, d](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx->size(); ++r) {
      const T* up = self.grad.data() + r * d;
      T* dst = g.data() + (*idx)[r] * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += up[c];
    }
  });
}

/// Inverted dropout; identity when `rate` is 0.
template <class T, class Rng>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  auto keep = std::make_shared<std::vector<std::uint8_t>>(x.value().size());
  std::bernoulli_distribution coin(1.0 - rate);
  const T factor = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*keep)[i] = coin(rng) ? 1 : 0;
    out[i] = (*keep)[i] ? out[i] * factor : T{0};
  }
  return make_result<T>(std::move(out), {x}, [keep, factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if ((*keep)[i]) g[i] += factor * self.grad[i];
    }
  });
}

/// Geometry and masking of one multi-head attention call over a padded batch.
/// Queries are rows b*query_len + i, keys rows b*key_len + j.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 1;
  // Valid key count per batch item; keys at j >= key_lengths[b] are masked.
  // Empty means every key is valid.
  std::vector<std::size_t> key_lengths;
  // Key j is masked for query i when j > i.
  bool causal = false;
  // Optional additive (query_len, key_len) mask shared across the batch;
  // entries are 0, finite offsets, or -inf.
  std::shared_ptr<const std::vector<double>> additive;

  bool allowed(std::size_t b, std::size_t i, std::size_t j) const {
    if (!key_lengths.empty() && j >= key_lengths[b]) return false;
    if (causal && j > i) return false;
    if (additive && std::isinf((*additive)[i * key_len + j])) return false;
    return true;
  }
};

/// softmax(Q K^T / sqrt(d_k) + mask) V per head. Masked keys are skipped
/// entirely, so they contribute exactly nothing to the output.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout) {
  const std::size_t d = q.value().cols();
  const std::size_t B = layout.batch, Lq = layout.query_len, Lk = layout.key_len;
  const std::size_t H = layout.heads;
  if (H == 0 || d % H != 0) {
    throw ConfigError("attention: width " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(H));
  }
  if (q.value().rows() != B * Lq || k.value().rows() != B * Lk ||
      v.value().rows() != B * Lk || k.value().cols() != d || v.value().cols() != d) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()) +
                         " inconsistent with layout");
  }
  if (!layout.key_lengths.empty() && layout.key_lengths.size() != B) {
    throw DimensionError("attention: key_lengths size does not match batch");
  }
  if (layout.additive && layout.additive->size() != Lq * Lk) {
    throw DimensionError("attention: additive mask size does not match (query, key)");
  }
  const std::size_t dk = d / H;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(dk));
  auto probs = std::make_shared<std::vector<T>>(B * H * Lq * Lk, T{0});
  Tensor<T> out({B * Lq, d});
  std::vector<T> score(Lk);
  const T* Q = q.value().data();
  const T* K = k.value().data();
  const T* V = v.value().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dk;
      for (std::size_t i = 0; i < Lq; ++i) {
        const T* qi = Q + (b * Lq + i) * d + off;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!layout.allowed(b, i, j)) continue;
          const T* kj = K + (b * Lk + j) * d + off;
          T s{0};
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          s *= inv_scale;
          if (layout.additive) s += static_cast<T>((*layout.additive)[i * Lk + j]);
          score[j] = s;
          mx = any ? std::max(mx, s) : s;
          any = true;
        }
        if (!any) throw NumericError("attention: fully masked query row");
        T* p = probs->data() + ((b * H + h) * Lq + i) * Lk;
        T total{0};
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!layout.allowed(b, i, j)) continue;
          p[j] = std::exp(score[j] - mx);
          total += p[j];
        }
        T* oi = out.data() + (b * Lq + i) * d + off;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!layout.allowed(b, i, j)) continue;
          p[j] /= total;
          const T* vj = V + (b * Lk + j) * d + off;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  check_finite(out, "attention");
  return make_result<T>(std::move(out), {q, k, v}, [layout, probs, inv_scale, d, dk](Node<T>& self) {
    Node<T>& pq = *self.parents[0];
    Node<T>& pk = *self.parents[1];
    Node<T>& pv = *self.parents[2];
    const std::size_t B = layout.batch, Lq = layout.query_len, Lk = layout.key_len;
    const std::size_t H = layout.heads;
    T* gq = pq.requires_grad ? pq.grad_buffer().data() : nullptr;
    T* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
    T* gv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
    const T* Q = pq.value.data();
    const T* K = pk.value.data();
    const T* V = pv.value.data();
    std::vector<T> dp(Lk);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * dk;
        for (std::size_t i = 0; i < Lq; ++i) {
          const T* p = probs->data() + ((b * H + h) * Lq + i) * Lk;
          const T* up = self.grad.data() + (b * Lq + i) * d + off;
          T dot{0};
          for (std::size_t j = 0; j < Lk; ++j) {
            if (!layout.allowed(b, i, j)) continue;
            const T* vj = V + (b * Lk + j) * d + off;
            T s{0};
            for (std::size_t c = 0; c < dk; ++c) s += up[c] * vj[c];
            dp[j] = s;
            dot += p[j] * s;
            if (gv) {
              T* gvj = gv + (b * Lk + j) * d + off;
              for (std::size_t c = 0; c < dk; ++c) gvj[c] += p[j] * up[c];
            }
          }
          const T* qi = Q + (b * Lq + i) * d + off;
          T* gqi = gq ? gq + (b * Lq + i) * d + off : nullptr;
          for (std::size_t j = 0; j < Lk; ++j) {
            if (!layout.allowed(b, i, j)) continue;
            const T ds = p[j] * (dp[j] - dot) * inv_scale;
            const T* kj = K + (b * Lk + j) * d + off;
            if (gqi) {
              for (std::size_t c = 0; c < dk; ++c) gqi[c] += ds * kj[c];
            }
            if (gk) {
              T* gkj = gk + (b * Lk + j) * d + off;
              for (std::size_t c = 0; c < dk; ++c) gkj[c] += ds * qi[c];
            }
          }
        }
      }
    }
  });
}

}  // namespace abnet

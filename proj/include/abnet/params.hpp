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

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "abnet/autodiff.hpp"
#include "abnet/error.hpp"
#include "abnet/tensor.hpp"

namespace abnet {

enum class Partition : std::uint8_t { frozen = 0, trainable = 1 };

inline std::string to_string(Partition p) {
  return p == Partition::trainable ? "trainable" : "frozen";
}

/// Named parameter tensors, each labelled FROZEN or TRAINABLE. Iteration is
/// in name order, which fixes optimizer and serialization order. Only
/// TRAINABLE tensors record gradients.
template <class T = float>
class ParameterStore {
 public:
  struct Entry {
    Var<T> var;
    Partition partition = Partition::frozen;
  };

  Var<T> add(const std::string& name, Tensor<T> value, Partition partition) {
    if (entries_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    Var<T> v = Var<T>::leaf(std::move(value), partition == Partition::trainable);
    entries_.emplace(name, Entry{v, partition});
    return v;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const Var<T>& get(const std::string& name) const { return entry(name).var; }

  Partition partition(const std::string& name) const { return entry(name).partition; }

  void set_partition(const std::string& name, Partition p) {
    Entry& e = mutable_entry(name);
    e.partition = p;
    e.var.set_requires_grad(p == Partition::trainable);
  }

  void set_all(Partition p) {
    for (auto& [name, e] : entries_) set_partition(name, p);
  }

  /// Replaces the value of an existing parameter; shapes must agree.
  void assign(const std::string& name, const Tensor<T>& value) {
    Entry& e = mutable_entry(name);
    if (e.var.value().shape() != value.shape()) {
      throw DimensionError("assign '" + name + "': shape " + shape_string(value.shape()) +
                           " does not match " + shape_string(e.var.value().shape()));
    }
    e.var.mutable_value() = value;
  }

  void zero_grad() {
    for (auto& [name, e] : entries_) e.var.zero_grad();
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t count(Partition p) const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
      if (e.partition == p) n += e.var.value().size();
    }
    return n;
  }

  std::size_t total() const { return count(Partition::frozen) + count(Partition::trainable); }

  /// Deep copy with fresh graph leaves.
  ParameterStore clone() const { return cast<T>(); }

  template <class U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, e] : entries_) {
      out.add(name, e.var.value().template cast<U>(), e.partition);
    }
    return out;
  }

 private:
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("missing parameter '" + name + "'");
    return it->second;
  }
  Entry& mutable_entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("missing parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

/// Seeded weight initializer.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <class T = float>
  Tensor<T> uniform(Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng_));
    return t;
  }

  // Glorot uniform for a (fan_in, fan_out) weight.
  template <class T = float>
  Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform<T>({fan_in, fan_out}, -a, a);
  }

  template <class T = float>
  Tensor<T> embedding(std::size_t rows, std::size_t cols) {
    return uniform<T>({rows, cols}, -0.1, 0.1);
  }

  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace abnet

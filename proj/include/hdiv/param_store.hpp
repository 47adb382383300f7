// SPDX-License-Identifier: Apache-2.0
//
// Ordered registry of named trainable tensors. Registration order is the
// canonical parameter order everywhere (optimizer slots, checkpoints), so
// training runs and serialized models stay bit-reproducible.
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "hdiv/tensor.hpp"

namespace hdiv {

template <class S>
class ParamStore {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t)});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  size_t size() const { return entries_.size(); }
  const std::string& name(size_t i) const { return entries_[i].name; }
  Tensor<S>& tensor(size_t i) { return entries_[i].tensor; }
  const Tensor<S>& tensor(size_t i) const { return entries_[i].tensor; }

  int64_t total_numel() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  struct Entry {
    std::string name;
    Tensor<S> tensor;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace hdiv

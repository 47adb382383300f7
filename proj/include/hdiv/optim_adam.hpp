// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias correction over a ParamStore. Moment accumulators are kept
// in double regardless of the parameter dtype so f32 training keeps stable,
// reproducible statistics.
#pragma once

#include <cmath>
#include <vector>

#include "hdiv/param_store.hpp"

namespace hdiv {

template <class S>
class AdamState {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit AdamState(const ParamStore<S>& store) {
    m_.reserve(store.size());
    v_.reserve(store.size());
    for (size_t i = 0; i < store.size(); ++i) {
      m_.emplace_back(store.tensor(i).numel(), 0.0);
      v_.emplace_back(store.tensor(i).numel(), 0.0);
    }
  }

  int64_t step_count() const { return t_; }

  // One update over every parameter. Parameters whose tensors accumulated no
  // gradient this step are treated as having zero gradient.
  void step(ParamStore<S>& store, double lr) {
    if (store.size() != m_.size()) throw ConfigError("adam: store/state size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (size_t i = 0; i < store.size(); ++i) {
      auto& p = store.tensor(i);
      if (static_cast<int64_t>(m_[i].size()) != p.numel())
        throw ConfigError("adam: parameter shape changed under the optimizer");
      const bool has_grad = p.has_grad();
      const std::vector<S>* grad = has_grad ? &p.grad() : nullptr;
      auto& values = p.mutable_values();
      for (size_t j = 0; j < values.size(); ++j) {
        const double g = has_grad ? static_cast<double>((*grad)[j]) : 0.0;
        if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
        m_[i][j] = kBeta1 * m_[i][j] + (1.0 - kBeta1) * g;
        v_[i][j] = kBeta2 * v_[i][j] + (1.0 - kBeta2) * g * g;
        const double m_hat = m_[i][j] / bc1;
        const double v_hat = v_[i][j] / bc2;
        values[j] =
            static_cast<S>(static_cast<double>(values[j]) - lr * m_hat / (std::sqrt(v_hat) + kEps));
      }
    }
  }

 private:
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Global L2 gradient clip across every parameter in the store. Returns the
// pre-clip norm.
template <class S>
double clip_grad_norm(ParamStore<S>& store, double max_norm) {
  double sq = 0;
  for (size_t i = 0; i < store.size(); ++i) {
    if (!store.tensor(i).has_grad()) continue;
    for (const S g : store.tensor(i).grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const S factor = static_cast<S>(max_norm / norm);
    for (size_t i = 0; i < store.size(); ++i) store.tensor(i).scale_grad(factor);
  }
  return norm;
}

}  // namespace hdiv

// SPDX-License-Identifier: Apache-2.0
//
// The invertible coupling block. Channels are split into a narrow
// low-frequency stream u1 and the high-frequency remainder u2; u1 is updated
// additively and u2 by a bounded elementwise affine map, so the inverse is
// available in closed form:
//
//   forward: v1 = u1 + phi(u2)
//            s  = bounded_scale(rho(v1), alpha)
//            v2 = u2 * exp(s) + eta(v1)
//   inverse: u2 = (v2 - eta(v1)) * exp(-s)
//            u1 = v1 - phi(u2)
//
// Each subnet's final convolution is zero-initialized, which makes a freshly
// built block exactly the identity map.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hdiv/conv.hpp"
#include "hdiv/param_store.hpp"
#include "hdiv/tensor.hpp"

namespace hdiv {

enum class SubnetKind { kDense, kResidual };

struct SubnetSpec {
  SubnetKind kind = SubnetKind::kDense;
  int64_t growth = 32;  // hidden width g; 16 is the usual residual setting
  double slope = 0.2;   // leaky-relu slope after hidden layers
};

inline const char* subnet_kind_name(SubnetKind k) {
  return k == SubnetKind::kDense ? "dense" : "residual";
}

// Bounded log-scale: alpha * (2*sigmoid(t) - 1), valued in (-alpha, alpha).
template <class S>
Tensor<S> bounded_scale(const Tensor<S>& t, S alpha) {
  return (sigmoid(t) * S(2) + S(-1)) * alpha;
}

namespace detail {

// He-style uniform fan-in init with the leaky-relu gain.
template <class S>
Tensor<S> kaiming_uniform(Shape shape, int64_t fan_in, double slope, Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  const double limit = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<S> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.uniform_range(-limit, limit));
  return Tensor<S>::from_data(std::move(shape), std::move(data), true);
}

}  // namespace detail

// A small convolutional network mapping c_in -> c_out channels at constant
// spatial size. Two shapes: a 5-layer dense block where every layer sees the
// input plus all previous hidden outputs, or a plain 2-layer residual-style
// stack. Parameters are registered in the given store under `prefix`.
template <class S>
class Subnet {
  static constexpr int64_t kKernel = 3;
  static constexpr int kDenseDepth = 5;

 public:
  Subnet(const SubnetSpec& spec, int64_t c_in, int64_t c_out, ParamStore<S>& store,
         const std::string& prefix, Rng& rng)
      : spec_(spec), c_in_(c_in), c_out_(c_out) {
    if (c_in <= 0 || c_out <= 0 || spec.growth <= 0)
      throw ConfigError("subnet: channel counts and growth must be positive");
    const int depth = spec.kind == SubnetKind::kDense ? kDenseDepth : 2;
    for (int i = 0; i < depth; ++i) {
      const bool final_layer = (i == depth - 1);
      const int64_t in = layer_in_channels(i);
      const int64_t out = final_layer ? c_out : spec.growth;
      const std::string base = prefix + ".conv" + std::to_string(i);
      Tensor<S> w = final_layer
                        ? Tensor<S>::zeros({out, in, kKernel, kKernel}, true)
                        : detail::kaiming_uniform<S>({out, in, kKernel, kKernel},
                                                     in * kKernel * kKernel, spec.slope, rng);
      weights_.push_back(store.add(base + ".weight", std::move(w)));
      biases_.push_back(store.add(base + ".bias", Tensor<S>::zeros({out}, true)));
    }
  }

  int64_t in_channels() const { return c_in_; }
  int64_t out_channels() const { return c_out_; }

  Tensor<S> forward(const Tensor<S>& x) const {
    if (x.dim(1) != c_in_)
      throw ShapeError("subnet: expected " + std::to_string(c_in_) + " input channels, got " +
                       std::to_string(x.dim(1)));
    const S slope = static_cast<S>(spec_.slope);
    if (spec_.kind == SubnetKind::kResidual) {
      auto h = leaky_relu(conv2d(x, weights_[0], biases_[0]), slope);
      return conv2d(h, weights_[1], biases_[1]);
    }
    std::vector<Tensor<S>> feats{x};
    for (int i = 0; i < kDenseDepth - 1; ++i) {
      auto in = feats.size() == 1 ? feats[0] : concat_channels(feats);
      feats.push_back(leaky_relu(conv2d(in, weights_[i], biases_[i]), slope));
    }
    return conv2d(concat_channels(feats), weights_[kDenseDepth - 1], biases_[kDenseDepth - 1]);
  }

 private:
  int64_t layer_in_channels(int i) const {
    if (spec_.kind == SubnetKind::kResidual) return i == 0 ? c_in_ : spec_.growth;
    return c_in_ + i * spec_.growth;  // input plus i previous hidden outputs
  }

  SubnetSpec spec_;
  int64_t c_in_, c_out_;
  std::vector<Tensor<S>> weights_;
  std::vector<Tensor<S>> biases_;
};

template <class S>
class InvBlock {
 public:
  InvBlock(int64_t c_lf, int64_t c_hf, const SubnetSpec& spec, S alpha, ParamStore<S>& store,
           const std::string& prefix, Rng& rng)
      : c_lf_(c_lf),
        c_hf_(c_hf),
        alpha_(alpha),
        phi_(spec, c_hf, c_lf, store, prefix + ".phi", rng),
        rho_(spec, c_lf, c_hf, store, prefix + ".rho", rng),
        eta_(spec, c_lf, c_hf, store, prefix + ".eta", rng) {
    if (alpha <= S(0)) throw ConfigError("invblock: alpha must be positive");
  }

  int64_t channels() const { return c_lf_ + c_hf_; }

  // u: [N, c_lf + c_hf, H, W] -> v of the same shape. If log_det is given it
  // receives the log |det J| of this application: the sum of s over all
  // elements (the additive branch contributes nothing).
  Tensor<S> forward(const Tensor<S>& u, double* log_det = nullptr) const {
    auto parts = split_channels(u, {c_lf_, c_hf_});
    auto v1 = parts[0] + phi_.forward(parts[1]);
    auto s = bounded_scale(rho_.forward(v1), alpha_);
    auto v2 = parts[1] * exp(s) + eta_.forward(v1);
    if (log_det) {
      double acc = 0;
      for (const S x : s.values()) acc += static_cast<double>(x);
      *log_det = acc;
    }
    return concat_channels<S>({v1, v2});
  }

  Tensor<S> inverse(const Tensor<S>& v) const {
    auto parts = split_channels(v, {c_lf_, c_hf_});
    const auto& v1 = parts[0];
    auto s = bounded_scale(rho_.forward(v1), alpha_);
    auto u2 = (parts[1] - eta_.forward(v1)) * exp(-s);
    auto u1 = v1 - phi_.forward(u2);
    return concat_channels<S>({u1, u2});
  }

 private:
  int64_t c_lf_, c_hf_;
  S alpha_;
  Subnet<S> phi_, rho_, eta_;
};

}  // namespace hdiv

// SPDX-License-Identifier: Apache-2.0
//
// The hierarchical invertible model. Each level applies a Haar layer and a
// stack of coupling blocks, then peels off a narrow low-frequency band; the
// high-frequency remainder feeds the next level. After the last level the
// remainder is the latent, whose trailing channel slice is the designated
// noise carrier: denoising = forward, zero that slice, exact inverse.
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hdiv/coupling.hpp"
#include "hdiv/param_store.hpp"
#include "hdiv/tensor.hpp"
#include "hdiv/wavelet.hpp"

namespace hdiv {

struct ModelConfig {
  int64_t channels = 3;  // image channels C_img
  int levels = 3;        // pyramid depth L
  int blocks = 8;        // coupling blocks per level B
  SubnetSpec subnet;
  double alpha = 1.0;           // log-scale bound of the affine update
  double noise_fraction = 0.4;  // r: share of latent channels treated as noise
  HaarNorm norm = HaarNorm::kAveraging;
};

// Channel bookkeeping for every level. The low-frequency band peeled per
// level is always C_img wide, so the guides stay image-shaped at every scale.
struct ChannelPlan {
  int64_t c_img = 0;
  std::vector<int64_t> c_in;  // input channels per level; c_in[0] = c_img
  std::vector<int64_t> c_hf;  // remainder after the LF split: 4*c_in - c_img
  int64_t k_n = 0;            // noise-slice width in the final latent

  static ChannelPlan make(const ModelConfig& cfg) {
    if (cfg.channels <= 0) throw ConfigError("model: channels must be positive");
    if (cfg.levels < 1 || cfg.levels > 3) throw ConfigError("model: levels must be in 1..3");
    if (cfg.blocks < 1) throw ConfigError("model: blocks must be >= 1");
    if (!(cfg.noise_fraction > 0.0 && cfg.noise_fraction < 1.0))
      throw ConfigError("model: noise_fraction must lie in (0, 1)");
    ChannelPlan plan;
    plan.c_img = cfg.channels;
    int64_t c = cfg.channels;
    for (int l = 0; l < cfg.levels; ++l) {
      plan.c_in.push_back(c);
      plan.c_hf.push_back(4 * c - cfg.channels);
      c = plan.c_hf.back();
    }
    plan.k_n = std::llround(cfg.noise_fraction * static_cast<double>(plan.c_hf.back()));
    if (plan.k_n == 0 || plan.k_n == plan.c_hf.back())
      throw ConfigError("model: noise fraction " + std::to_string(cfg.noise_fraction) +
                        " yields a degenerate latent split");
    return plan;
  }
};

template <class S>
struct ForwardOutputs {
  std::vector<Tensor<S>> lf_bands;  // per level, [N, C_img, H/2^l, W/2^l]
  Tensor<S> latent;                 // [N, C_HF^L, H/2^L, W/2^L]
};

template <class S>
class PyramidModel {
 public:
  PyramidModel(const ModelConfig& cfg, uint64_t seed)
      : cfg_(cfg), plan_(ChannelPlan::make(cfg)) {
    Rng rng(seed);
    for (int l = 0; l < cfg.levels; ++l) {
      levels_.emplace_back();
      for (int b = 0; b < cfg.blocks; ++b) {
        const std::string prefix =
            "level" + std::to_string(l) + ".block" + std::to_string(b);
        levels_[l].push_back(std::make_unique<InvBlock<S>>(
            cfg.channels, plan_.c_hf[l], cfg.subnet, static_cast<S>(cfg.alpha), params_,
            prefix, rng));
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const ChannelPlan& plan() const { return plan_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const InvBlock<S>& block(int level, int index) const {
    return *levels_.at(static_cast<size_t>(level)).at(static_cast<size_t>(index));
  }

  // Smallest spatial multiple an input must satisfy.
  int64_t spatial_divisor() const { return int64_t(1) << cfg_.levels; }

  // If log_det is given it receives log |det J| of the whole decomposition,
  // summed over the batch (Haar layers contribute a constant per level, the
  // affine updates their bounded log-scales).
  ForwardOutputs<S> forward_decompose(const Tensor<S>& y, double* log_det = nullptr) const {
    detail::require_nchw("forward_decompose", y);
    if (y.dim(1) != cfg_.channels)
      throw ShapeError("forward_decompose: expected " + std::to_string(cfg_.channels) +
                       " channels, got " + std::to_string(y.dim(1)));
    const int64_t div = spatial_divisor();
    if (y.dim(2) % div != 0 || y.dim(3) % div != 0)
      throw ShapeError("forward_decompose: spatial size " + shape_str(y.shape()) +
                       " not divisible by " + std::to_string(div));
    if (log_det) *log_det = 0;
    ForwardOutputs<S> out;
    Tensor<S> h = y;
    for (int l = 0; l < cfg_.levels; ++l) {
      if (log_det)
        *log_det += static_cast<double>(h.dim(0)) *
                    haar_log_det(cfg_.norm, h.dim(1), h.dim(2), h.dim(3));
      Tensor<S> t = haar_dwt(h, cfg_.norm);
      for (const auto& block : levels_[l]) {
        double block_ld = 0;
        t = block->forward(t, log_det ? &block_ld : nullptr);
        if (log_det) *log_det += block_ld;
      }
      auto parts = split_channels(t, {cfg_.channels, plan_.c_hf[l]});
      out.lf_bands.push_back(parts[0]);
      h = parts[1];
    }
    out.latent = h;
    return out;
  }

  // latent -> (signal slice, noise slice); the noise slice is the LAST k_n
  // channels, a convention that must stay stable across save/load.
  std::pair<Tensor<S>, Tensor<S>> disentangle_split(const Tensor<S>& latent) const {
    if (latent.dim(1) != plan_.c_hf.back())
      throw ShapeError("disentangle_split: expected " + std::to_string(plan_.c_hf.back()) +
                       " latent channels, got " + std::to_string(latent.dim(1)));
    auto parts = split_channels(latent, {plan_.c_hf.back() - plan_.k_n, plan_.k_n});
    return {parts[0], parts[1]};
  }

  Tensor<S> inverse_reconstruct(const std::vector<Tensor<S>>& lf_bands,
                                const Tensor<S>& latent_hat) const {
    if (static_cast<int>(lf_bands.size()) != cfg_.levels)
      throw ShapeError("inverse_reconstruct: expected " + std::to_string(cfg_.levels) +
                       " low-frequency bands, got " + std::to_string(lf_bands.size()));
    Tensor<S> h = latent_hat;
    for (int l = cfg_.levels - 1; l >= 0; --l) {
      if (lf_bands[l].dim(1) != cfg_.channels || h.dim(1) != plan_.c_hf[l])
        throw ShapeError("inverse_reconstruct: band shapes do not match the channel plan");
      Tensor<S> t = concat_channels<S>({lf_bands[l], h});
      for (auto it = levels_[l].rbegin(); it != levels_[l].rend(); ++it) t = (*it)->inverse(t);
      h = haar_idwt(t, cfg_.norm);
    }
    return h;
  }

  // Forward, zero the noise slice, exact inverse. The zeros are a fresh
  // constant, so no gradient flows through the discarded slice.
  Tensor<S> denoise(const Tensor<S>& y) const {
    auto fwd = forward_decompose(y);
    auto [signal, noise] = disentangle_split(fwd.latent);
    auto zeros = Tensor<S>::zeros(noise.shape());
    auto latent_hat = concat_channels<S>({signal, zeros});
    return inverse_reconstruct(fwd.lf_bands, latent_hat);
  }

  // Forward then inverse with the untouched latent; equals the input up to
  // round-off for any parameter values — the bijectivity witness.
  Tensor<S> self_reconstruct(const Tensor<S>& y) const {
    auto fwd = forward_decompose(y);
    return inverse_reconstruct(fwd.lf_bands, fwd.latent);
  }

 private:
  ModelConfig cfg_;
  ChannelPlan plan_;
  ParamStore<S> params_;
  std::vector<std::vector<std::unique_ptr<InvBlock<S>>>> levels_;
};

}  // namespace hdiv

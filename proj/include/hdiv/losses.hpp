// SPDX-License-Identifier: Apache-2.0
//
// The three-term training objective: multiscale low-frequency guidance,
// latent distribution matching, and image reconstruction, combined by fixed
// nonnegative weights. Every term is a mean, so the weights transfer across
// resolutions and batch sizes.
#pragma once

#include <vector>

#include "hdiv/tensor.hpp"

namespace hdiv {

struct LossWeights {
  double recon = 1.0;  // lambda_1
  double guide = 4.0;  // lambda_2
  double dist = 1.0;   // lambda_3

  void validate() const {
    if (recon < 0 || guide < 0 || dist < 0)
      throw ConfigError("loss weights must be nonnegative");
  }
};

// Sum over levels of the MSE between each predicted low-frequency band and
// its downsampled guide image.
template <class S>
Tensor<S> guide_loss(const std::vector<Tensor<S>>& lf_bands,
                     const std::vector<Tensor<S>>& guides) {
  if (lf_bands.empty() || lf_bands.size() != guides.size())
    throw ShapeError("guide_loss: band/guide lists must be non-empty and equal-length");
  Tensor<S> total;
  for (size_t l = 0; l < lf_bands.size(); ++l) {
    detail::require_same_shape("guide_loss", lf_bands[l], guides[l]);
    auto mse = mean_all(square(lf_bands[l] - guides[l]));
    total = l == 0 ? mse : total + mse;
  }
  return total;
}

// KL of the per-channel fitted Gaussian to the standard normal; see
// kl_std_normal for the moment conventions and the variance floor.
template <class S>
Tensor<S> dist_loss(const Tensor<S>& latent) {
  return kl_std_normal(latent);
}

// Mean absolute error.
template <class S>
Tensor<S> recon_loss(const Tensor<S>& x, const Tensor<S>& x_hat) {
  detail::require_same_shape("recon_loss", x, x_hat);
  return mean_all(abs(x - x_hat));
}

template <class S>
Tensor<S> total_loss(const Tensor<S>& recon, const Tensor<S>& guide, const Tensor<S>& dist,
                     const LossWeights& w) {
  w.validate();
  if (recon.numel() != 1 || guide.numel() != 1 || dist.numel() != 1)
    throw ShapeError("total_loss: inputs must be scalars");
  return recon * static_cast<S>(w.recon) + guide * static_cast<S>(w.guide) +
         dist * static_cast<S>(w.dist);
}

}  // namespace hdiv

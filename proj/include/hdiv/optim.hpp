// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias correction, the halving learning-rate schedule, and the
// training loop: sample -> augment -> decompose -> zero the noise slice ->
// reconstruct -> three-term loss -> backward -> update. Fully deterministic
// under (seed, config, dataset): every random draw derives from the master
// seed, and batches are assembled serially.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hdiv/dataset.hpp"
#include "hdiv/losses.hpp"
#include "hdiv/metrics.hpp"
#include "hdiv/optim_adam.hpp"
#include "hdiv/pyramid.hpp"
#include "hdiv/resample.hpp"

namespace hdiv {

struct TrainConfig {
  int64_t iterations = 10000;
  int64_t batch_size = 4;
  int64_t patch_size = 64;
  double base_lr = 2e-4;
  int64_t decay_every = 5000;  // halve the lr every this many iterations
  uint64_t seed = 1;
  LossWeights weights;
  double grad_clip = 0.0;   // global L2 cap; 0 disables
  int64_t val_every = 500;  // 0 disables validation
  double awgn_sigma = 0.0;  // >0: re-noise clean patches on the fly

  void validate() const {
    if (iterations < 0 || batch_size < 1 || patch_size < 2)
      throw ConfigError("train: iterations/batch/patch out of range");
    if (base_lr <= 0 || decay_every <= 0) throw ConfigError("train: lr and decay must be > 0");
    if (grad_clip < 0 || val_every < 0 || awgn_sigma < 0)
      throw ConfigError("train: negative grad_clip/val_every/awgn_sigma");
    weights.validate();
  }
};

inline double lr_at(const TrainConfig& cfg, int64_t iter) {
  if (iter < 0) throw ConfigError("lr_at: negative iteration");
  return cfg.base_lr * std::pow(0.5, static_cast<double>(iter / cfg.decay_every));
}

struct TrainRow {
  int64_t iter = 0;  // 1-based position in the run
  double lr = 0, recon = 0, guide = 0, dist = 0, total = 0;
  bool has_val = false;
  double val_psnr = 0;
};

template <class S>
struct TrainResult {
  std::vector<TrainRow> history;
  double best_val_psnr = -1.0;
  int64_t best_iter = -1;
  std::vector<std::vector<S>> best_params;  // snapshot in ParamStore order
};

namespace detail {

template <class S>
std::vector<std::vector<S>> snapshot_params(const ParamStore<S>& store) {
  std::vector<std::vector<S>> out;
  out.reserve(store.size());
  for (size_t i = 0; i < store.size(); ++i) out.push_back(store.tensor(i).values());
  return out;
}

template <class S>
void restore_params(ParamStore<S>& store, const std::vector<std::vector<S>>& snapshot) {
  if (snapshot.size() != store.size())
    throw ShapeError("parameter snapshot does not match the store");
  for (size_t i = 0; i < store.size(); ++i) {
    if (snapshot[i].size() != store.tensor(i).values().size())
      throw ShapeError("parameter snapshot entry '" + store.name(i) + "' has the wrong size");
    store.tensor(i).mutable_values() = snapshot[i];
  }
}

// Mean denoised PSNR over whole validation images (center-cropped to the
// model's divisor), evaluated without building a tape.
template <class S>
double validation_psnr(const PyramidModel<S>& model,
                       const std::vector<std::pair<ImageBuffer, ImageBuffer>>& pairs) {
  NoGradGuard ng;
  double acc = 0;
  for (const auto& [clean, noisy] : pairs) {
    auto denoised = model.denoise(image_to_tensor<S>(noisy));
    acc += psnr(tensor_to_image(denoised), clean);
  }
  return acc / static_cast<double>(pairs.size());
}

}  // namespace detail

// The training objective on one batch: decompose the noisy input, zero the
// noise slice, reconstruct, and combine the three loss terms. Exposed so
// tests and the trainer share one definition.
template <class S>
struct BatchLosses {
  Tensor<S> recon, guide, dist, total;
};

template <class S>
BatchLosses<S> training_objective(const PyramidModel<S>& model, const Tensor<S>& noisy,
                                  const Tensor<S>& clean, const std::vector<Tensor<S>>& guides,
                                  const LossWeights& w) {
  auto out = model.forward_decompose(noisy);
  auto [signal, noise] = model.disentangle_split(out.latent);
  auto latent_hat = concat_channels<S>({signal, Tensor<S>::zeros(noise.shape())});
  auto denoised = model.inverse_reconstruct(out.lf_bands, latent_hat);
  BatchLosses<S> losses;
  losses.recon = recon_loss(clean, denoised);
  losses.guide = guide_loss(out.lf_bands, guides);
  losses.dist = dist_loss(out.latent);
  losses.total = total_loss(losses.recon, losses.guide, losses.dist, w);
  return losses;
}

template <class S>
TrainResult<S> train_loop(PyramidModel<S>& model, const PairDataset& train_ds,
                          const PairDataset* val_ds, const TrainConfig& cfg,
                          const std::function<void(const TrainRow&)>& on_row = {}) {
  cfg.validate();
  const int64_t div = model.spatial_divisor();
  if (cfg.patch_size % div != 0)
    throw ConfigError("train: patch size must be divisible by " + std::to_string(div));

  // Desk-scale corpora fit in memory; load once.
  std::vector<std::pair<ImageBuffer, ImageBuffer>> train_pairs;
  for (size_t i = 0; i < train_ds.size(); ++i) {
    train_pairs.push_back(train_ds.load(i));
    const auto& img = train_pairs.back().first;
    if (img.channels != model.config().channels)
      throw DataError("training image channel count does not match the model: " +
                      train_ds.pair(i).clean);
    if (img.height < cfg.patch_size || img.width < cfg.patch_size)
      throw DataError("training image smaller than the patch size: " + train_ds.pair(i).clean);
  }
  std::vector<std::pair<ImageBuffer, ImageBuffer>> val_pairs;
  if (val_ds) {
    for (size_t i = 0; i < val_ds->size(); ++i) {
      auto [clean, noisy] = val_ds->load(i);
      val_pairs.emplace_back(center_crop_to_multiple(clean, div),
                             center_crop_to_multiple(noisy, div));
    }
  }

  AdamState<S> opt(model.params());
  TrainResult<S> result;
  const int levels = model.config().levels;

  for (int64_t it = 0; it < cfg.iterations; ++it) {
    std::vector<ImageBuffer> clean_patches, noisy_patches;
    std::vector<std::vector<ImageBuffer>> guide_imgs(levels);
    for (int64_t slot = 0; slot < cfg.batch_size; ++slot) {
      Rng rng(Rng::derive(cfg.seed, static_cast<uint64_t>(it * cfg.batch_size + slot)));
      const auto& pair = train_pairs[rng.uniform_int(train_pairs.size())];
      auto [clean, noisy] = sample_patch(pair.first, pair.second, cfg.patch_size, rng);
      const auto choice = draw_augment(rng);
      clean = apply_augment(clean, choice);
      noisy = cfg.awgn_sigma > 0 ? add_awgn(clean, cfg.awgn_sigma, rng.next_u64())
                                 : apply_augment(noisy, choice);
      for (int l = 0; l < levels; ++l)
        guide_imgs[l].push_back(bicubic_downsample(clean, int64_t(1) << (l + 1)));
      clean_patches.push_back(std::move(clean));
      noisy_patches.push_back(std::move(noisy));
    }
    auto clean_batch = images_to_batch<S>(clean_patches);
    auto noisy_batch = images_to_batch<S>(noisy_patches);
    std::vector<Tensor<S>> guides;
    for (int l = 0; l < levels; ++l) guides.push_back(images_to_batch<S>(guide_imgs[l]));

    auto losses = training_objective(model, noisy_batch, clean_batch, guides, cfg.weights);
    model.params().zero_grad();
    backward(losses.total);
    if (cfg.grad_clip > 0) clip_grad_norm(model.params(), cfg.grad_clip);
    const double lr = lr_at(cfg, it);
    opt.step(model.params(), lr);

    TrainRow row;
    row.iter = it + 1;
    row.lr = lr;
    row.recon = static_cast<double>(losses.recon.item());
    row.guide = static_cast<double>(losses.guide.item());
    row.dist = static_cast<double>(losses.dist.item());
    row.total = static_cast<double>(losses.total.item());
    if (!val_pairs.empty() && cfg.val_every > 0 &&
        (row.iter % cfg.val_every == 0 || row.iter == cfg.iterations)) {
      row.has_val = true;
      row.val_psnr = detail::validation_psnr(model, val_pairs);
      if (row.val_psnr > result.best_val_psnr) {
        result.best_val_psnr = row.val_psnr;
        result.best_iter = row.iter;
        result.best_params = detail::snapshot_params(model.params());
      }
    }
    result.history.push_back(row);
    if (on_row) on_row(row);
  }
  return result;
}

}  // namespace hdiv

// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <numeric>

#include "hdiv/losses.hpp"
#include "hdiv/pyramid.hpp"
#include "testing.hpp"

using hdiv::LossWeights;
using hdiv::Tensor;
using D = Tensor<double>;

TEST_CASE("guide loss analytic cases") {
  hdiv::Rng rng(1);
  auto a = testing::random_tensor<double>({1, 3, 4, 4}, rng);
  CHECK(hdiv::guide_loss<double>({a}, {a}).item() == 0.0);

  auto offset = a + 0.5;
  CHECK(hdiv::guide_loss<double>({offset}, {a}).item() == Catch::Approx(0.25));

  // Two levels sum their per-level means.
  auto b = testing::random_tensor<double>({1, 3, 2, 2}, rng);
  CHECK(hdiv::guide_loss<double>({offset, b + 1.0}, {a, b}).item() == Catch::Approx(1.25));
}

TEST_CASE("guide loss matches a direct double-loop MSE oracle") {
  hdiv::Rng rng(2);
  auto pred = testing::random_tensor<double>({2, 3, 5, 4}, rng);
  auto target = testing::random_tensor<double>({2, 3, 5, 4}, rng);
  double acc = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.values()[i] - target.values()[i];
    acc += d * d;
  }
  acc /= static_cast<double>(pred.numel());
  CHECK(hdiv::guide_loss<double>({pred}, {target}).item() == Catch::Approx(acc).epsilon(1e-9));
}

TEST_CASE("guide loss validates its inputs") {
  auto a = D::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(hdiv::guide_loss<double>({}, {}), hdiv::ShapeError);
  CHECK_THROWS_AS(hdiv::guide_loss<double>({a}, {a, a}), hdiv::ShapeError);
  CHECK_THROWS_AS(hdiv::guide_loss<double>({a}, {D::zeros({1, 3, 2, 2})}), hdiv::ShapeError);
}

TEST_CASE("recon loss analytic cases and loop oracle") {
  hdiv::Rng rng(3);
  auto a = testing::random_tensor<double>({1, 3, 4, 4}, rng);
  CHECK(hdiv::recon_loss(a, a).item() == 0.0);
  CHECK(hdiv::recon_loss(a + 0.2, a).item() == Catch::Approx(0.2));

  auto b = testing::random_tensor<double>({1, 3, 4, 4}, rng);
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    acc += std::abs(a.values()[i] - b.values()[i]);
  acc /= static_cast<double>(a.numel());
  CHECK(hdiv::recon_loss(a, b).item() == Catch::Approx(acc).epsilon(1e-9));
  CHECK_THROWS_AS(hdiv::recon_loss(a, D::zeros({2, 3, 4, 4})), hdiv::ShapeError);
}

TEST_CASE("dist loss closed forms through the loss entry point") {
  auto std_like = D::from_data({1, 2, 2, 2}, {-1, 1, 1, -1, 1, -1, -1, 1});
  CHECK(hdiv::dist_loss(std_like).item() == Catch::Approx(0.0).margin(1e-12));
  auto shifted = D::from_data({1, 1, 2, 2}, {0, 2, 2, 0});
  CHECK(hdiv::dist_loss(shifted).item() == Catch::Approx(0.5));
  const double r = std::sqrt(std::exp(1.0));
  auto scaled = D::from_data({1, 1, 2, 2}, {-r, r, r, -r});
  CHECK(hdiv::dist_loss(scaled).item() == Catch::Approx((std::exp(1.0) - 2.0) / 2.0));
}

TEST_CASE("dist loss is invariant to spatial permutation") {
  hdiv::Rng rng(4);
  auto x = testing::random_tensor<double>({1, 3, 4, 4}, rng);
  const double before = hdiv::dist_loss(x).item();
  // Reverse every channel plane (a spatial permutation).
  auto perm = x.values();
  const int64_t plane = 16;
  for (int64_t c = 0; c < 3; ++c)
    std::reverse(perm.begin() + c * plane, perm.begin() + (c + 1) * plane);
  auto xp = D::from_data({1, 3, 4, 4}, perm);
  CHECK(hdiv::dist_loss(xp).item() == Catch::Approx(before).epsilon(1e-12));
}

TEST_CASE("total loss weighting") {
  auto r = D::scalar(0.1), g = D::scalar(0.05), d = D::scalar(0.2);
  LossWeights w;
  CHECK(hdiv::total_loss(r, g, d, w).item() == Catch::Approx(0.5));
  CHECK(hdiv::total_loss(D::scalar(0), D::scalar(0), D::scalar(0), w).item() == 0.0);
  LossWeights no_guide{1.0, 0.0, 1.0};
  CHECK(hdiv::total_loss(r, g, d, no_guide).item() == Catch::Approx(0.3));
  LossWeights bad{-1.0, 4.0, 1.0};
  CHECK_THROWS_AS(hdiv::total_loss(r, g, d, bad), hdiv::ConfigError);
  CHECK_THROWS_AS(hdiv::total_loss(D::zeros({2}), g, d, w), hdiv::ShapeError);
}

TEST_CASE("all loss terms are nonnegative and zero at their minimizers") {
  hdiv::Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    auto a = testing::random_tensor<double>({1, 2, 4, 4}, rng);
    auto b = testing::random_tensor<double>({1, 2, 4, 4}, rng);
    CHECK(hdiv::guide_loss<double>({a}, {b}).item() >= 0.0);
    CHECK(hdiv::recon_loss(a, b).item() >= 0.0);
    CHECK(hdiv::dist_loss(a).item() >= 0.0);
  }
}

// Full-objective gradient check on a tiny model: forward decomposition, the
// zero-slice inverse, all three loss terms — differentiated end to end
// through both the forward and inverse passes.
TEST_CASE("model parameter gradients of the total loss match finite differences") {
  hdiv::ModelConfig cfg;
  cfg.channels = 3;
  cfg.levels = 1;
  cfg.blocks = 1;
  cfg.subnet = {hdiv::SubnetKind::kResidual, 3, 0.2};
  cfg.noise_fraction = 0.4;
  hdiv::PyramidModel<double> model(cfg, 42);
  hdiv::Rng rng(43);
  testing::randomize_params<double>(model.params(), rng, 0.2);

  auto noisy = testing::random_tensor<double>({1, 3, 8, 8}, rng, false, 0.5);
  auto clean = testing::random_tensor<double>({1, 3, 8, 8}, rng, false, 0.5);
  auto guide0 = testing::random_tensor<double>({1, 3, 4, 4}, rng, false, 0.5);
  LossWeights w;

  auto objective = [&]() -> Tensor<double> {
    auto out = model.forward_decompose(noisy);
    auto [signal, noise] = model.disentangle_split(out.latent);
    auto latent_hat =
        hdiv::concat_channels<double>({signal, Tensor<double>::zeros(noise.shape())});
    auto denoised = model.inverse_reconstruct(out.lf_bands, latent_hat);
    return hdiv::total_loss(hdiv::recon_loss(clean, denoised),
                            hdiv::guide_loss<double>(out.lf_bands, {guide0}),
                            hdiv::dist_loss(out.latent), w);
  };

  auto loss = objective();
  hdiv::backward(loss);
  auto f = [&]() { return objective().item(); };
  auto& store = model.params();
  size_t checked = 0;
  for (size_t i = 0; i < store.size(); ++i) {
    auto& p = store.tensor(i);
    REQUIRE(p.has_grad());
    const double err =
        testing::max_rel_diff(testing::to_doubles(p.grad()), testing::fd_grad(p, f, 1e-5));
    INFO("param " << store.name(i));
    CHECK(err < 1e-6);
    checked += p.numel();
  }
  CHECK(checked > 100);
}

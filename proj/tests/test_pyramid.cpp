// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "hdiv/pyramid.hpp"
#include "testing.hpp"

using hdiv::ChannelPlan;
using hdiv::ModelConfig;
using hdiv::PyramidModel;
using hdiv::Tensor;
using D = Tensor<double>;

namespace {

ModelConfig tiny_config(int levels, int blocks, int64_t g = 4) {
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.levels = levels;
  cfg.blocks = blocks;
  cfg.subnet = {hdiv::SubnetKind::kResidual, g, 0.2};
  cfg.noise_fraction = 0.4;
  return cfg;
}

}  // namespace

TEST_CASE("channel plan arithmetic for the three-level RGB model") {
  auto plan = ChannelPlan::make(tiny_config(3, 1));
  CHECK(plan.c_in == std::vector<int64_t>{3, 9, 33});
  CHECK(plan.c_hf == std::vector<int64_t>{9, 33, 129});
  CHECK(plan.k_n == 52);  // round(0.4 * 129) = round(51.6)
}

TEST_CASE("noise slice width rounds the configured fraction") {
  // round(0.4 * 10) = 4 — exact fraction analog of the plan computation.
  CHECK(std::llround(0.4 * 10.0) == 4);
  auto cfg = tiny_config(1, 1);
  cfg.noise_fraction = 1.0 / 5.0;
  CHECK(ChannelPlan::make(cfg).k_n == 2);  // round(1.8)
  cfg.noise_fraction = 4.0 / 5.0;
  CHECK(ChannelPlan::make(cfg).k_n == 7);  // round(7.2)
}

TEST_CASE("degenerate latent splits are rejected") {
  auto cfg = tiny_config(1, 1);  // C_HF = 9
  cfg.noise_fraction = 0.01;     // k_n = 0
  CHECK_THROWS_AS(ChannelPlan::make(cfg), hdiv::ConfigError);
  cfg.noise_fraction = 0.99;  // k_n = 9 = everything
  CHECK_THROWS_AS(ChannelPlan::make(cfg), hdiv::ConfigError);
  cfg.noise_fraction = 0.0;
  CHECK_THROWS_AS(ChannelPlan::make(cfg), hdiv::ConfigError);
  cfg.noise_fraction = 0.4;
  cfg.levels = 4;
  CHECK_THROWS_AS(ChannelPlan::make(cfg), hdiv::ConfigError);
}

TEST_CASE("forward decomposition shapes follow the plan") {
  PyramidModel<double> model(tiny_config(3, 1), 77);
  hdiv::Rng rng(1);
  auto y = testing::random_tensor<double>({2, 3, 16, 16}, rng);
  auto out = model.forward_decompose(y);
  REQUIRE(out.lf_bands.size() == 3);
  CHECK(out.lf_bands[0].shape() == hdiv::Shape{2, 3, 8, 8});
  CHECK(out.lf_bands[1].shape() == hdiv::Shape{2, 3, 4, 4});
  CHECK(out.lf_bands[2].shape() == hdiv::Shape{2, 3, 2, 2});
  CHECK(out.latent.shape() == hdiv::Shape{2, 129, 2, 2});

  // Lossless bookkeeping: outputs carry exactly the input element count.
  int64_t total = out.latent.numel();
  for (const auto& b : out.lf_bands) total += b.numel();
  CHECK(total == y.numel());
}

TEST_CASE("indivisible or mischanneled inputs are rejected") {
  PyramidModel<double> model(tiny_config(2, 1), 77);
  CHECK_THROWS_AS(model.forward_decompose(D::zeros({1, 3, 10, 12})), hdiv::ShapeError);
  CHECK_THROWS_AS(model.forward_decompose(D::zeros({1, 1, 16, 16})), hdiv::ShapeError);
  CHECK(model.spatial_divisor() == 4);
}

TEST_CASE("identity-initialized model decomposes a constant to pure LL") {
  PyramidModel<double> model(tiny_config(2, 2), 5);
  auto y = D::full({1, 3, 8, 8}, 0.625);
  auto out = model.forward_decompose(y);
  // Averaging Haar keeps the constant in the first LL band; every detail
  // band is zero, so the deeper levels (which consume the detail stream)
  // and the latent are zero too.
  for (double v : out.lf_bands[0].values()) CHECK(v == Catch::Approx(0.625).margin(1e-15));
  for (double v : out.lf_bands[1].values()) CHECK(v == Catch::Approx(0.0).margin(1e-15));
  for (double v : out.latent.values()) CHECK(v == Catch::Approx(0.0).margin(1e-15));

  // And reconstruction from (constant bands, zero latent) returns the constant.
  auto rec = model.inverse_reconstruct(out.lf_bands, out.latent);
  for (double v : rec.values()) CHECK(v == Catch::Approx(0.625).margin(1e-14));
}

TEST_CASE("identity-initialized model self-reconstructs to round-off") {
  PyramidModel<double> model(tiny_config(3, 2), 6);
  hdiv::Rng rng(2);
  auto y = testing::random_tensor<double>({1, 3, 16, 16}, rng);
  auto rec = model.self_reconstruct(y);
  CHECK(testing::max_abs_diff(rec.values(), y.values()) < 1e-14);
}

TEST_CASE("self-reconstruction survives random parameters at both dtypes") {
  hdiv::Rng master(99);
  for (int trial = 0; trial < 4; ++trial) {
    const auto cfg = tiny_config(trial % 3 + 1, trial % 2 + 1);
    PyramidModel<double> model(cfg, master.next_u64());
    hdiv::Rng prng(master.next_u64());
    testing::randomize_params<double>(model.params(), prng, 0.1);
    auto y = testing::random_tensor<double>({2, 3, 16, 16}, prng);
    auto rec = model.self_reconstruct(y);
    CHECK(testing::max_abs_diff(rec.values(), y.values()) < 1e-10);

    PyramidModel<float> fmodel(cfg, 1234 + trial);
    hdiv::Rng frng(4321 + trial);
    testing::randomize_params<float>(fmodel.params(), frng, 0.1);
    std::vector<float> data(2 * 3 * 16 * 16);
    for (auto& v : data) v = static_cast<float>(frng.uniform());
    auto fy = Tensor<float>::from_data({2, 3, 16, 16}, data);
    auto frec = fmodel.self_reconstruct(fy);
    double max_err = 0;
    for (size_t i = 0; i < data.size(); ++i)
      max_err = std::max(max_err, std::abs(double(frec.values()[i]) - double(data[i])));
    CHECK(max_err < 1e-4);
  }
}

TEST_CASE("disentangle split partitions the latent exactly") {
  PyramidModel<double> model(tiny_config(2, 1), 3);
  hdiv::Rng rng(4);
  auto y = testing::random_tensor<double>({1, 3, 8, 8}, rng);
  auto out = model.forward_decompose(y);
  auto [signal, noise] = model.disentangle_split(out.latent);
  CHECK(signal.dim(1) == out.latent.dim(1) - model.plan().k_n);
  CHECK(noise.dim(1) == model.plan().k_n);
  auto recombined = hdiv::concat_channels<double>({signal, noise});
  CHECK(recombined.values() == out.latent.values());
  CHECK_THROWS_AS(model.disentangle_split(y), hdiv::ShapeError);
}

TEST_CASE("denoise of an identity model matches the hand-built wavelet composition") {
  // With identity blocks the model is a pure Haar pyramid, so denoising can
  // be replicated with wavelet calls alone: decompose, zero the last k_n
  // latent channels, rebuild level by level.
  const auto cfg = tiny_config(2, 2);
  PyramidModel<double> model(cfg, 8);
  hdiv::Rng rng(5);
  auto y = testing::random_tensor<double>({1, 3, 8, 8}, rng);
  auto got = model.denoise(y);

  const auto& plan = model.plan();
  std::vector<D> lf;
  D h = y;
  for (int l = 0; l < cfg.levels; ++l) {
    auto t = hdiv::haar_dwt(h, cfg.norm);
    auto parts = hdiv::split_channels(t, {cfg.channels, plan.c_hf[l]});
    lf.push_back(parts[0]);
    h = parts[1];
  }
  auto parts = hdiv::split_channels(h, {plan.c_hf.back() - plan.k_n, plan.k_n});
  h = hdiv::concat_channels<double>({parts[0], D::zeros(parts[1].shape())});
  for (int l = cfg.levels - 1; l >= 0; --l)
    h = hdiv::haar_idwt(hdiv::concat_channels<double>({lf[l], h}), cfg.norm);

  CHECK(got.shape() == y.shape());
  CHECK(testing::max_abs_diff(got.values(), h.values()) < 1e-14);
}

TEST_CASE("log-det diagnostic accumulates haar and block terms") {
  // Identity blocks: only the Haar layers contribute.
  const auto cfg = tiny_config(2, 3);
  PyramidModel<double> model(cfg, 9);
  hdiv::Rng rng(6);
  auto y = testing::random_tensor<double>({1, 3, 8, 8}, rng);
  double ld = 0;
  model.forward_decompose(y, &ld);
  const double expected = hdiv::haar_log_det(cfg.norm, 3, 8, 8) +
                          hdiv::haar_log_det(cfg.norm, 9, 4, 4);
  CHECK(ld == Catch::Approx(expected));

  // Randomized parameters shift it; batch of 2 doubles the haar share.
  testing::randomize_params<double>(model.params(), rng, 0.1);
  double ld1 = 0, ld2 = 0;
  model.forward_decompose(y, &ld1);
  hdiv::Rng rng2(7);
  auto y2 = testing::random_tensor<double>({2, 3, 8, 8}, rng2);
  model.forward_decompose(y2, &ld2);
  CHECK(ld1 != Catch::Approx(expected));
  CHECK(std::isfinite(ld1));
  CHECK(std::isfinite(ld2));
}

TEST_CASE("inverse_reconstruct validates band lists") {
  PyramidModel<double> model(tiny_config(2, 1), 10);
  hdiv::Rng rng(8);
  auto y = testing::random_tensor<double>({1, 3, 8, 8}, rng);
  auto out = model.forward_decompose(y);
  CHECK_THROWS_AS(model.inverse_reconstruct({out.lf_bands[0]}, out.latent), hdiv::ShapeError);
  auto bad_bands = out.lf_bands;
  std::swap(bad_bands[0], bad_bands[1]);
  CHECK_THROWS_AS(model.inverse_reconstruct(bad_bands, out.latent), hdiv::ShapeError);
}

TEST_CASE("orthonormal haar variant is supported end to end") {
  auto cfg = tiny_config(2, 1);
  cfg.norm = hdiv::HaarNorm::kOrthonormal;
  PyramidModel<double> model(cfg, 11);
  hdiv::Rng rng(9);
  testing::randomize_params<double>(model.params(), rng, 0.1);
  auto y = testing::random_tensor<double>({1, 3, 8, 8}, rng);
  auto rec = model.self_reconstruct(y);
  CHECK(testing::max_abs_diff(rec.values(), y.values()) < 1e-10);
}

// SPDX-License-Identifier: Apache-2.0
//
// Thin CLI front end: flag parsing only, all behavior lives in
// hdiv/commands.hpp so tests can drive the same code paths.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hdiv/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"hdiv — invertible hierarchical image denoiser"};
  app.require_subcommand(1);
  const auto dtype_check = CLI::IsMember({"f32", "f64"});

  std::string train_config;
  std::optional<uint64_t> train_seed;
  std::optional<std::string> train_dtype, train_out;
  auto* train = app.add_subcommand("train", "Train a model from a JSON run config");
  train->add_option("--config", train_config, "JSON run config path")->required();
  train->add_option("--seed", train_seed, "Override train.seed");
  train->add_option("--dtype", train_dtype, "Override dtype (f32|f64)")->check(dtype_check);
  train->add_option("--out", train_out, "Override the output directory");

  std::string den_ckpt, den_in, den_out;
  auto* denoise = app.add_subcommand("denoise", "Denoise one image with a trained checkpoint");
  denoise->add_option("--ckpt", den_ckpt, "Checkpoint path")->required();
  denoise->add_option("input", den_in, "Input image (PNG or PGM)")->required();
  denoise->add_option("--out", den_out, "Output PNG path")->required();

  std::string eval_ckpt, eval_root;
  bool eval_block = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a clean/noisy pair set");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("root", eval_root, "Dataset root (clean/ + noisy/ or manifest.tsv)")
      ->required();
  eval->add_flag("--blockiness", eval_block, "Also report PSNR-B");

  std::string chk_ckpt, chk_config, chk_dtype = "f32";
  bool chk_fresh = false, chk_break = false;
  uint64_t chk_seed = 1;
  auto* check = app.add_subcommand("check", "Run the invariant property suite");
  check->add_option("--ckpt", chk_ckpt, "Checkpoint to check");
  check->add_flag("--fresh", chk_fresh, "Check a freshly initialized model instead");
  check->add_option("--config", chk_config, "Run config giving the fresh model shape");
  check->add_option("--dtype", chk_dtype, "Fresh model dtype (f32|f64)")->check(dtype_check);
  check->add_option("--seed", chk_seed, "Seed for the check inputs (and fresh init)");
  check->add_flag("--debug-break-inverse", chk_break)->group("");  // fault injection, hidden

  std::string dec_ckpt, dec_in, dec_out;
  auto* decompose =
      app.add_subcommand("decompose", "Write per-level low-frequency bands and latent stats");
  decompose->add_option("--ckpt", dec_ckpt, "Checkpoint path")->required();
  decompose->add_option("input", dec_in, "Input image (PNG or PGM)")->required();
  decompose->add_option("--out", dec_out, "Output directory")->required();

  std::string syn_root, syn_out;
  double syn_sigma = 0.0;
  uint64_t syn_seed = 1;
  auto* synth = app.add_subcommand("synth", "Materialize a noisy dataset from clean images");
  synth->add_option("clean_root", syn_root, "Directory of clean PNG/PGM images")->required();
  synth->add_option("--out", syn_out, "Output dataset root")->required();
  synth->add_option("--sigma", syn_sigma, "Gaussian noise standard deviation ([0,1] units)");
  synth->add_option("--seed", syn_seed, "Noise seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version land here too; keep their exit code 0 and map
    // genuine usage errors onto the documented config-error code.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train)
      return hdiv::cmd_train(train_config, train_seed, train_dtype, train_out, std::cout,
                             std::cerr);
    if (*denoise) return hdiv::cmd_denoise(den_ckpt, den_in, den_out, std::cout, std::cerr);
    if (*eval) return hdiv::cmd_eval(eval_ckpt, eval_root, eval_block, std::cout, std::cerr);
    if (*check) {
      if (chk_ckpt.empty() && !chk_fresh) {
        std::cerr << "error: provide --ckpt or --fresh\n";
        return 2;
      }
      return hdiv::cmd_check(chk_ckpt, chk_fresh, chk_config, chk_dtype, chk_seed, chk_break,
                             std::cout, std::cerr);
    }
    if (*decompose) return hdiv::cmd_decompose(dec_ckpt, dec_in, dec_out, std::cout, std::cerr);
    if (*synth)
      return hdiv::cmd_synth(syn_root, syn_out, syn_sigma, syn_seed, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

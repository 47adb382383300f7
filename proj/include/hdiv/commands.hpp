// SPDX-License-Identifier: Apache-2.0
//
// Implementations behind the CLI subcommands. Each cmd_* function returns a
// process exit code and reports failures on the error stream, so the thin
// CLI front end and the tests can drive identical code paths.
#pragma once

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "hdiv/checkpoint.hpp"
#include "hdiv/metrics.hpp"
#include "hdiv/optim.hpp"
#include "hdiv/runconfig.hpp"

namespace hdiv {

namespace detail {

inline std::string num_str(double v, const char* fmt = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// Worker count for per-image parallel sections: hardware concurrency capped
// by HDIV_THREADS (malformed or non-positive values fall back to the default)
// and by the number of jobs.
inline size_t worker_count(size_t jobs) {
  size_t n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("HDIV_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = std::min(n, static_cast<size_t>(v));
  }
  return std::max<size_t>(1, std::min(n, jobs));
}

template <class S>
Tensor<S> random_unit_tensor(const Shape& shape, Rng& rng) {
  auto t = Tensor<S>::zeros(shape);
  for (auto& v : t.mutable_values()) v = static_cast<S>(rng.uniform());
  return t;
}

inline ImageBuffer random_unit_image(int64_t channels, int64_t hw, Rng& rng) {
  auto img = ImageBuffer::make(channels, hw, hw);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

template <class S>
double max_abs_difference(const Tensor<S>& a, const Tensor<S>& b) {
  const auto& av = a.values();
  const auto& bv = b.values();
  if (av.size() != bv.size()) throw ShapeError("max_abs_difference: size mismatch");
  double m = 0;
  for (size_t i = 0; i < av.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i])));
  return m;
}

// ---------------------------------------------------------------------------
// train

template <class S>
int run_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.train_root.empty())
    throw DataError("config: data.train_root is required for training");
  PairDataset train_ds = PairDataset::from_root(cfg.train_root);
  std::optional<PairDataset> val_ds;
  if (!cfg.val_root.empty()) val_ds = PairDataset::from_root(cfg.val_root);

  std::filesystem::create_directories(cfg.out_dir);
  const std::string hist_path = cfg.out_dir + "/history.csv";
  std::ofstream hist(hist_path);
  if (!hist) throw DataError("cannot open for writing: " + hist_path);
  hist << "# seed=" << cfg.train.seed << "\n";
  hist << "iter,lr,recon,guide,dist,total,val_psnr\n";

  PyramidModel<S> model(cfg.model, cfg.train.seed);
  out << "training " << (std::is_same_v<S, double> ? "f64" : "f32") << " model: levels="
      << cfg.model.levels << " blocks=" << cfg.model.blocks << " params="
      << model.params().total_numel() << "\n";

  TrainRow last{};
  auto on_row = [&](const TrainRow& r) {
    last = r;
    hist << r.iter << ',' << num_str(r.lr) << ',' << num_str(r.recon) << ',' << num_str(r.guide)
         << ',' << num_str(r.dist) << ',' << num_str(r.total) << ','
         << (r.has_val ? num_str(r.val_psnr) : "") << "\n";
    if (r.has_val) {
      hist.flush();
      out << "iter " << r.iter << " lr " << num_str(r.lr) << " total " << num_str(r.total, "%.6g")
          << " val_psnr " << num_str(r.val_psnr, "%.4f") << "\n";
      out.flush();  // progress must survive block buffering on redirects
    }
  };

  TrainResult<S> result;
  try {
    result = train_loop(model, train_ds, val_ds ? &*val_ds : nullptr, cfg.train, on_row);
  } catch (const NumericError& e) {
    hist.flush();
    err << "error: " << e.what() << "\n";
    err << "diagnostics: last completed iteration " << last.iter << " (lr " << num_str(last.lr)
        << ", total " << num_str(last.total) << "); partial history kept in " << hist_path
        << "\n";
    return 4;
  }
  hist.close();

  save_model(cfg.out_dir + "/last.ckpt", model);
  if (!result.best_params.empty()) restore_params(model.params(), result.best_params);
  save_model(cfg.out_dir + "/best.ckpt", model);

  out << "training complete: " << result.history.size() << " iterations\n";
  if (result.best_iter >= 0)
    out << "best validation PSNR " << num_str(result.best_val_psnr, "%.4f") << " dB at iteration "
        << result.best_iter << "\n";
  out << "wrote " << hist_path << ", " << cfg.out_dir << "/best.ckpt, " << cfg.out_dir
      << "/last.ckpt\n";
  return 0;
}

// ---------------------------------------------------------------------------
// denoise / decompose helpers

inline ImageBuffer load_and_crop(const std::string& path, int64_t divisor, std::ostream& out) {
  ImageBuffer img = load_image(path);
  ImageBuffer crop = center_crop_to_multiple(img, divisor);
  out << "input " << img.width << "x" << img.height << " center-cropped to " << crop.width << "x"
      << crop.height << "\n";
  return crop;
}

template <class S>
int run_denoise(const std::vector<CheckpointEntry>& entries, const std::string& input,
                const std::string& output, std::ostream& out) {
  PyramidModel<S> model = model_from_entries<S>(entries);
  NoGradGuard ng;
  ImageBuffer img = load_and_crop(input, model.spatial_divisor(), out);
  auto denoised = model.denoise(image_to_tensor<S>(img));
  save_png(output, tensor_to_image(denoised));
  out << "wrote " << output << "\n";
  return 0;
}

template <class S>
int run_decompose(const std::vector<CheckpointEntry>& entries, const std::string& input,
                  const std::string& out_dir, std::ostream& out) {
  PyramidModel<S> model = model_from_entries<S>(entries);
  NoGradGuard ng;
  ImageBuffer img = load_and_crop(input, model.spatial_divisor(), out);
  auto fwd = model.forward_decompose(image_to_tensor<S>(img));

  std::filesystem::create_directories(out_dir);
  for (size_t l = 0; l < fwd.lf_bands.size(); ++l) {
    const std::string path = out_dir + "/lf_level" + std::to_string(l + 1) + ".png";
    save_png(path, tensor_to_image(fwd.lf_bands[l]));
    out << "wrote " << path << "\n";
  }

  // Per-channel statistics of the final latent and of its two slices.
  const auto& v = fwd.latent.values();
  const int64_t channels = fwd.latent.shape()[1];
  const int64_t spatial = fwd.latent.shape()[2] * fwd.latent.shape()[3];
  const int64_t noise_channels = model.plan().k_n;
  auto slice_stats = [&](int64_t c0, int64_t c1) {
    nlohmann::json mins = nlohmann::json::array(), means = nlohmann::json::array(),
                   stds = nlohmann::json::array();
    for (int64_t c = c0; c < c1; ++c) {
      double mn = std::numeric_limits<double>::infinity(), acc = 0, acc2 = 0;
      for (int64_t i = 0; i < spatial; ++i) {
        const double x = static_cast<double>(v[static_cast<size_t>(c * spatial + i)]);
        mn = std::min(mn, x);
        acc += x;
        acc2 += x * x;
      }
      const double mean = acc / static_cast<double>(spatial);
      const double var = std::max(0.0, acc2 / static_cast<double>(spatial) - mean * mean);
      mins.push_back(mn);
      means.push_back(mean);
      stds.push_back(std::sqrt(var));
    }
    return nlohmann::json{{"min", mins}, {"mean", means}, {"std", stds}};
  };
  nlohmann::json report{{"latent_channels", channels},
                        {"content_channels", channels - noise_channels},
                        {"noise_channels", noise_channels},
                        {"latent", slice_stats(0, channels)},
                        {"content_slice", slice_stats(0, channels - noise_channels)},
                        {"noise_slice", slice_stats(channels - noise_channels, channels)}};
  const std::string json_path = out_dir + "/latent_stats.json";
  std::ofstream js(json_path);
  if (!js) throw DataError("cannot open for writing: " + json_path);
  js << report.dump(2) << "\n";
  out << "wrote " << json_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalRow {
  std::string name;
  double psnr = 0, ssim = 0, psnrb = 0;
};

template <class S>
int run_eval(const std::vector<CheckpointEntry>& entries, const std::string& root,
             bool blockiness, std::ostream& out) {
  PyramidModel<S> model = model_from_entries<S>(entries);
  PairDataset ds = PairDataset::from_root(root);
  const int64_t div = model.spatial_divisor();

  std::vector<EvalRow> rows(ds.size());
  std::vector<std::string> errors(ds.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    NoGradGuard ng;  // grad mode is thread-local; keep evaluation tape-free
    for (size_t i = next.fetch_add(1); i < ds.size(); i = next.fetch_add(1)) {
      try {
        auto [clean, noisy] = ds.load(i);
        clean = center_crop_to_multiple(clean, div);
        noisy = center_crop_to_multiple(noisy, div);
        ImageBuffer denoised = tensor_to_image(model.denoise(image_to_tensor<S>(noisy)));
        EvalRow row;
        row.name = std::filesystem::path(ds.pair(i).clean).filename().string();
        row.psnr = psnr(denoised, clean);
        row.ssim = ssim(denoised, clean);
        if (blockiness) row.psnrb = psnr_b(denoised, clean);
        rows[i] = std::move(row);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const size_t workers = worker_count(ds.size());
  std::vector<std::thread> pool;
  for (size_t w = 0; w + 1 < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);

  out << "name\tpsnr\tssim" << (blockiness ? "\tpsnrb" : "") << "\n";
  EvalRow mean;
  for (const auto& r : rows) {
    out << r.name << '\t' << num_str(r.psnr, "%.4f") << '\t' << num_str(r.ssim, "%.6f");
    if (blockiness) out << '\t' << num_str(r.psnrb, "%.4f");
    out << "\n";
    mean.psnr += r.psnr;
    mean.ssim += r.ssim;
    mean.psnrb += r.psnrb;
  }
  const double n = static_cast<double>(rows.size());
  out << "mean\t" << num_str(mean.psnr / n, "%.4f") << '\t' << num_str(mean.ssim / n, "%.6f");
  if (blockiness) out << '\t' << num_str(mean.psnrb / n, "%.4f");
  out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// check

template <class S>
int run_check(PyramidModel<S>& model, uint64_t seed, bool break_inverse, std::ostream& out,
              std::ostream& err) {
  constexpr bool kF64 = std::is_same_v<S, double>;
  struct Item {
    std::string name;
    double err;
    double tol;
  };
  std::vector<Item> items;
  Rng rng(seed);
  const int64_t channels = model.config().channels;

  {  // Haar analysis/synthesis must invert exactly, in both normalizations.
    NoGradGuard ng;
    auto x = random_unit_tensor<S>({2, channels, 16, 16}, rng);
    double e = 0;
    for (auto norm : {HaarNorm::kAveraging, HaarNorm::kOrthonormal})
      e = std::max(e, max_abs_difference(haar_idwt(haar_dwt(x, norm), norm), x));
    items.push_back({"haar_roundtrip", e, kF64 ? 1e-12 : 1e-5});
  }
  {  // Every coupling block must invert its own forward map.
    NoGradGuard ng;
    double e = 0;
    for (int l = 0; l < model.config().levels; ++l) {
      const int64_t width = channels + model.plan().c_hf[static_cast<size_t>(l)];
      auto u = random_unit_tensor<S>({1, width, 8, 8}, rng);
      for (int b = 0; b < model.config().blocks; ++b) {
        const auto& blk = model.block(l, b);
        e = std::max(e, max_abs_difference(blk.inverse(blk.forward(u)), u));
      }
    }
    items.push_back({"block_roundtrip", e, kF64 ? 1e-10 : 1e-4});
  }
  {  // Whole-pyramid self-reconstruction (decompose then invert untouched).
    NoGradGuard ng;
    const int64_t hw = model.spatial_divisor() * 8;
    auto y = random_unit_tensor<S>({1, channels, hw, hw}, rng);
    Tensor<S> rec;
    if (break_inverse) {
      // Fault injection: perturb the latent before inversion so the check
      // demonstrably trips on a broken inverse path.
      auto fwd = model.forward_decompose(y);
      auto bad = fwd.latent + Tensor<S>::full(fwd.latent.shape(), static_cast<S>(0.01));
      rec = model.inverse_reconstruct(fwd.lf_bands, bad);
    } else {
      rec = model.self_reconstruct(y);
    }
    items.push_back({"bijectivity", max_abs_difference(rec, y), kF64 ? 1e-10 : 1e-4});
  }
  {  // Directional-derivative spot check of the full training objective.
    const int64_t p = model.spatial_divisor() * 4;
    ImageBuffer clean = random_unit_image(channels, p, rng);
    ImageBuffer noisy = add_awgn(clean, 0.1, rng.next_u64());
    auto clean_t = image_to_tensor<S>(clean);
    auto noisy_t = image_to_tensor<S>(noisy);
    std::vector<Tensor<S>> guides;
    for (int l = 0; l < model.config().levels; ++l)
      guides.push_back(image_to_tensor<S>(bicubic_downsample(clean, int64_t(1) << (l + 1))));
    const LossWeights w;

    auto losses = training_objective(model, noisy_t, clean_t, guides, w);
    model.params().zero_grad();
    backward(losses.total);

    auto& store = model.params();
    std::vector<std::vector<double>> dir(store.size());
    double norm2 = 0;
    for (size_t i = 0; i < store.size(); ++i) {
      dir[i].resize(store.tensor(i).values().size());
      for (auto& d : dir[i]) {
        d = rng.normal();
        norm2 += d * d;
      }
    }
    const double inv_norm = 1.0 / std::sqrt(norm2);
    double ad = 0;
    for (size_t i = 0; i < store.size(); ++i) {
      for (auto& d : dir[i]) d *= inv_norm;
      if (!store.tensor(i).has_grad()) continue;
      const auto g = store.tensor(i).grad();
      for (size_t k = 0; k < g.size(); ++k) ad += static_cast<double>(g[k]) * dir[i][k];
    }

    const double h = kF64 ? 1e-5 : 1e-3;
    auto theta0 = snapshot_params(store);
    auto eval_at = [&](double shift) {
      for (size_t i = 0; i < store.size(); ++i) {
        auto& vals = store.tensor(i).mutable_values();
        for (size_t k = 0; k < vals.size(); ++k)
          vals[k] = static_cast<S>(static_cast<double>(theta0[i][k]) + shift * dir[i][k]);
      }
      NoGradGuard ng;
      return static_cast<double>(
          training_objective(model, noisy_t, clean_t, guides, w).total.item());
    };
    const double fd = (eval_at(h) - eval_at(-h)) / (2 * h);
    restore_params(store, theta0);
    const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
    items.push_back({"gradient", rel, kF64 ? 1e-3 : 5e-2});
  }

  std::string first_bad;
  for (const auto& item : items) {
    const bool ok = std::isfinite(item.err) && item.err <= item.tol;
    out << "check " << item.name << ": max_err=" << num_str(item.err, "%.3e")
        << " tol=" << num_str(item.tol, "%.0e") << (ok ? " PASS" : " FAIL") << "\n";
    if (!ok && first_bad.empty()) first_bad = item.name;
  }
  if (!first_bad.empty()) {
    err << "violated invariant: " << first_bad << "\n";
    return 5;
  }
  out << "all checks passed\n";
  return 0;
}

// ---------------------------------------------------------------------------
// synth

inline std::vector<std::filesystem::path> list_images(const std::string& root) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root, ec)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (has_suffix(name, ".png") || has_suffix(name, ".pgm")) files.push_back(entry.path());
  }
  if (ec) throw DataError("cannot read directory: " + root + " (" + ec.message() + ")");
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public command entry points. Each returns the process exit code.

inline int cmd_train(const std::string& config_path, std::optional<uint64_t> seed,
                     std::optional<std::string> dtype, std::optional<std::string> out_dir,
                     std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
    if (seed) cfg.train.seed = *seed;
    if (dtype) {
      if (*dtype != "f32" && *dtype != "f64")
        throw ConfigError("dtype must be 'f32' or 'f64'");
      cfg.dtype = *dtype;
    }
    if (out_dir) cfg.out_dir = *out_dir;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    return cfg.dtype == "f64" ? detail::run_train<double>(cfg, out, err)
                              : detail::run_train<float>(cfg, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  }
}

inline int cmd_denoise(const std::string& ckpt, const std::string& input,
                       const std::string& output, std::ostream& out, std::ostream& err) {
  try {
    const auto entries = read_checkpoint(ckpt);
    return checkpoint_param_dtype(entries) == 1
               ? detail::run_denoise<double>(entries, input, output, out)
               : detail::run_denoise<float>(entries, input, output, out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

inline int cmd_eval(const std::string& ckpt, const std::string& root, bool blockiness,
                    std::ostream& out, std::ostream& err) {
  try {
    const auto entries = read_checkpoint(ckpt);
    return checkpoint_param_dtype(entries) == 1
               ? detail::run_eval<double>(entries, root, blockiness, out)
               : detail::run_eval<float>(entries, root, blockiness, out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

inline int cmd_check(const std::string& ckpt, bool fresh, const std::string& config_path,
                     const std::string& dtype, uint64_t seed, bool break_inverse,
                     std::ostream& out, std::ostream& err) {
  try {
    if (fresh || ckpt.empty()) {
      ModelConfig mc;
      if (!config_path.empty()) mc = load_run_config(config_path).model;
      if (dtype == "f64") {
        PyramidModel<double> model(mc, seed);
        return detail::run_check(model, seed, break_inverse, out, err);
      }
      if (dtype != "f32") throw ConfigError("dtype must be 'f32' or 'f64'");
      PyramidModel<float> model(mc, seed);
      return detail::run_check(model, seed, break_inverse, out, err);
    }
    const auto entries = read_checkpoint(ckpt);
    if (checkpoint_param_dtype(entries) == 1) {
      auto model = model_from_entries<double>(entries);
      return detail::run_check(model, seed, break_inverse, out, err);
    }
    auto model = model_from_entries<float>(entries);
    return detail::run_check(model, seed, break_inverse, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

inline int cmd_decompose(const std::string& ckpt, const std::string& input,
                         const std::string& out_dir, std::ostream& out, std::ostream& err) {
  try {
    const auto entries = read_checkpoint(ckpt);
    return checkpoint_param_dtype(entries) == 1
               ? detail::run_decompose<double>(entries, input, out_dir, out)
               : detail::run_decompose<float>(entries, input, out_dir, out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

inline int cmd_synth(const std::string& clean_root, const std::string& out_root, double sigma,
                     uint64_t seed, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  try {
    if (sigma < 0) throw ConfigError("synth: sigma must be >= 0");
    const auto files = detail::list_images(clean_root);
    if (files.empty()) throw DataError("no .png or .pgm images found in: " + clean_root);
    fs::create_directories(fs::path(out_root) / "clean");
    fs::create_directories(fs::path(out_root) / "noisy");
    for (size_t i = 0; i < files.size(); ++i) {
      ImageBuffer img = load_image(files[i].string());
      const std::string name = files[i].stem().string() + ".png";
      save_png((fs::path(out_root) / "clean" / name).string(), img);
      ImageBuffer noisy = add_awgn(img, sigma, Rng::derive(seed, i));
      save_png((fs::path(out_root) / "noisy" / name).string(), noisy);
    }
    out << "wrote " << files.size() << " pairs to " << out_root << "\n";
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace hdiv

// SPDX-License-Identifier: Apache-2.0
//
// Run-configuration parsing and command-level behavior: strict JSON schema,
// exit codes, produced artifacts, and end-to-end training determinism.
#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hdiv/checkpoint.hpp"
#include "hdiv/commands.hpp"
#include "hdiv/runconfig.hpp"

using namespace hdiv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hdiv_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// A small grayscale corpus: smooth sinusoidal plates, then a noisy twin made
// by the synth command so the pair tree matches the dataset layout exactly.
void make_dataset(const fs::path& root, int count = 6, int size = 48) {
  fs::create_directories(root / "src");
  for (int i = 0; i < count; ++i) {
    ImageBuffer img = ImageBuffer::make(1, size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        img.at(0, y, x) = 0.5f + 0.35f * std::sin(0.19f * (x + 3 * i)) *
                                      std::cos(0.23f * (y - 2 * i));
    save_png((root / "src" / ("img" + std::to_string(i) + ".png")).string(), img);
  }
  std::ostringstream out, err;
  REQUIRE(cmd_synth((root / "src").string(), (root / "ds").string(), 25.0 / 255.0, 77, out,
                    err) == 0);
}

std::string tiny_config(const fs::path& root, const std::string& extra_train = "",
                        const std::string& dtype = "f32") {
  std::ostringstream cfg;
  cfg << "{\n"
      << "  \"model\": {\"channels\": 1, \"levels\": 1, \"blocks\": 1,\n"
      << "             \"subnet\": \"residual\", \"growth\": 4},\n"
      << "  \"train\": {\"iterations\": 6, \"batch_size\": 2, \"patch_size\": 16,\n"
      << "             \"base_lr\": 1e-3, \"decay_every\": 100, \"seed\": 9,\n"
      << "             \"val_every\": 3" << extra_train << "},\n"
      << "  \"data\": {\"train_root\": \"" << (root / "ds").string() << "\",\n"
      << "            \"val_root\": \"" << (root / "ds").string() << "\"},\n"
      << "  \"dtype\": \"" << dtype << "\"\n"
      << "}\n";
  return cfg.str();
}

}  // namespace

TEST_CASE("run config defaults survive an empty document") {
  const RunConfig cfg = parse_run_config("{}");
  REQUIRE(cfg.dtype == "f32");
  REQUIRE(cfg.out_dir == "run");
  REQUIRE(cfg.train_root.empty());
  REQUIRE(cfg.model.channels == 3);
  REQUIRE(cfg.model.levels == 3);
  REQUIRE(cfg.model.blocks == 8);
  REQUIRE(cfg.model.subnet.kind == SubnetKind::kDense);
  REQUIRE(cfg.model.subnet.growth == 32);
  REQUIRE(cfg.model.norm == HaarNorm::kAveraging);
  REQUIRE(cfg.train.iterations == 10000);
  REQUIRE(cfg.train.weights.guide == 4.0);
}

TEST_CASE("run config reads every documented key") {
  const RunConfig cfg = parse_run_config(R"({
    "model": {"channels": 1, "levels": 2, "blocks": 3, "subnet": "residual",
              "growth": 7, "alpha": 1.5, "noise_fraction": 0.3, "haar": "orthonormal"},
    "train": {"iterations": 12, "batch_size": 5, "patch_size": 32, "base_lr": 0.002,
              "decay_every": 6, "seed": 42, "grad_clip": 9.0, "val_every": 4,
              "awgn_sigma": 0.1, "weights": {"recon": 2.0, "guide": 3.0, "dist": 0.5}},
    "data": {"train_root": "/tmp/a", "val_root": "/tmp/b"},
    "dtype": "f64",
    "out_dir": "exp1"
  })");
  REQUIRE(cfg.model.channels == 1);
  REQUIRE(cfg.model.levels == 2);
  REQUIRE(cfg.model.blocks == 3);
  REQUIRE(cfg.model.subnet.kind == SubnetKind::kResidual);
  REQUIRE(cfg.model.subnet.growth == 7);
  REQUIRE(cfg.model.alpha == 1.5);
  REQUIRE(cfg.model.noise_fraction == 0.3);
  REQUIRE(cfg.model.norm == HaarNorm::kOrthonormal);
  REQUIRE(cfg.train.iterations == 12);
  REQUIRE(cfg.train.batch_size == 5);
  REQUIRE(cfg.train.patch_size == 32);
  REQUIRE(cfg.train.base_lr == 0.002);
  REQUIRE(cfg.train.decay_every == 6);
  REQUIRE(cfg.train.seed == 42);
  REQUIRE(cfg.train.grad_clip == 9.0);
  REQUIRE(cfg.train.val_every == 4);
  REQUIRE(cfg.train.awgn_sigma == 0.1);
  REQUIRE(cfg.train.weights.recon == 2.0);
  REQUIRE(cfg.train.weights.guide == 3.0);
  REQUIRE(cfg.train.weights.dist == 0.5);
  REQUIRE(cfg.train_root == "/tmp/a");
  REQUIRE(cfg.val_root == "/tmp/b");
  REQUIRE(cfg.dtype == "f64");
  REQUIRE(cfg.out_dir == "exp1");
}

TEST_CASE("subnet choice sets the default hidden width") {
  REQUIRE(parse_run_config(R"({"model":{"subnet":"dense"}})").model.subnet.growth == 32);
  REQUIRE(parse_run_config(R"({"model":{"subnet":"residual"}})").model.subnet.growth == 16);
  REQUIRE(parse_run_config(R"({"model":{"subnet":"residual","growth":3}})").model.subnet.growth ==
          3);
}

TEST_CASE("run config rejects malformed documents") {
  // Typos cannot silently become defaults, at any nesting depth.
  REQUIRE_THROWS_AS(parse_run_config(R"({"modle":{}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":{"chanels":3}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"train":{"iters":5}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"train":{"weights":{"rcon":1}}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"data":{"root":"/x"}})"), ConfigError);
  REQUIRE_THROWS_MATCHES(parse_run_config(R"({"model":{"chanels":3}})"), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("unknown key 'chanels'")));
  // Wrong value shapes and enumerations.
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":{"levels":"three"}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":{"subnet":"mlp"}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":{"haar":"db2"}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"dtype":"f16"})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":[1,2]})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("[1,2,3]"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config("not json at all"), ConfigError);
  // Structural validation fires at parse time.
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":{"levels":0}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":{"levels":4}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"model":{"noise_fraction":0.999}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"train":{"base_lr":0}})"), ConfigError);
  REQUIRE_THROWS_AS(parse_run_config(R"({"train":{"iterations":-1}})"), ConfigError);
}

TEST_CASE("load_run_config reports an unreadable path") {
  REQUIRE_THROWS_AS(load_run_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("synth writes deterministic pairs and validates its inputs") {
  TempDir tmp("synth");
  make_dataset(tmp.path, 3);

  // sigma = 0 keeps the noisy copy identical to the clean one.
  std::ostringstream out, err;
  REQUIRE(cmd_synth(tmp.file("src"), tmp.file("zero"), 0.0, 5, out, err) == 0);
  REQUIRE(out.str().find("wrote 3 pairs") != std::string::npos);
  for (int i = 0; i < 3; ++i) {
    const std::string name = "img" + std::to_string(i) + ".png";
    REQUIRE(slurp(tmp.file("zero") + "/clean/" + name) ==
            slurp(tmp.file("zero") + "/noisy/" + name));
  }

  // The same seed reproduces the same noisy bytes; a different seed does not.
  std::ostringstream o2, e2;
  REQUIRE(cmd_synth(tmp.file("src"), tmp.file("n1"), 0.1, 5, o2, e2) == 0);
  REQUIRE(cmd_synth(tmp.file("src"), tmp.file("n2"), 0.1, 5, o2, e2) == 0);
  REQUIRE(cmd_synth(tmp.file("src"), tmp.file("n3"), 0.1, 6, o2, e2) == 0);
  REQUIRE(slurp(tmp.file("n1") + "/noisy/img0.png") == slurp(tmp.file("n2") + "/noisy/img0.png"));
  REQUIRE(slurp(tmp.file("n1") + "/noisy/img0.png") != slurp(tmp.file("n3") + "/noisy/img0.png"));

  std::ostringstream o3, e3;
  REQUIRE(cmd_synth(tmp.file("src"), tmp.file("bad"), -0.5, 5, o3, e3) == 2);
  fs::create_directories(tmp.path / "empty");
  REQUIRE(cmd_synth(tmp.file("empty"), tmp.file("bad2"), 0.1, 5, o3, e3) == 3);
  REQUIRE(cmd_synth(tmp.file("missing"), tmp.file("bad3"), 0.1, 5, o3, e3) == 3);
  REQUIRE(e3.str().find("error:") != std::string::npos);
}

TEST_CASE("train smoke run produces history and checkpoints, deterministically") {
  TempDir tmp("train");
  make_dataset(tmp.path);
  write_text(tmp.file("cfg.json"), tiny_config(tmp.path));

  std::ostringstream out, err;
  REQUIRE(cmd_train(tmp.file("cfg.json"), std::nullopt, std::nullopt, tmp.file("run1"), out,
                    err) == 0);
  REQUIRE(out.str().find("training complete") != std::string::npos);
  REQUIRE(fs::exists(tmp.file("run1") + "/history.csv"));
  REQUIRE(fs::exists(tmp.file("run1") + "/last.ckpt"));
  REQUIRE(fs::exists(tmp.file("run1") + "/best.ckpt"));

  const auto hist = lines_of(
      std::string(reinterpret_cast<const char*>(slurp(tmp.file("run1") + "/history.csv").data()),
                  slurp(tmp.file("run1") + "/history.csv").size()));
  REQUIRE(hist.size() == 2 + 6);  // seed line + header + one row per iteration
  REQUIRE(hist[0] == "# seed=9");
  REQUIRE(hist[1] == "iter,lr,recon,guide,dist,total,val_psnr");
  // Validation column filled exactly on multiples of val_every (and last iter).
  for (size_t i = 2; i < hist.size(); ++i) {
    const bool has_val = !hist[i].empty() && hist[i].back() != ',';
    const long iter = std::stol(hist[i].substr(0, hist[i].find(',')));
    REQUIRE(has_val == (iter % 3 == 0 || iter == 6));
  }

  SECTION("a rerun with the same config is byte-identical") {
    std::ostringstream o2, e2;
    REQUIRE(cmd_train(tmp.file("cfg.json"), std::nullopt, std::nullopt, tmp.file("run2"), o2,
                      e2) == 0);
    REQUIRE(slurp(tmp.file("run1") + "/history.csv") == slurp(tmp.file("run2") + "/history.csv"));
    REQUIRE(slurp(tmp.file("run1") + "/last.ckpt") == slurp(tmp.file("run2") + "/last.ckpt"));
    REQUIRE(slurp(tmp.file("run1") + "/best.ckpt") == slurp(tmp.file("run2") + "/best.ckpt"));
  }

  SECTION("the seed flag overrides the config and is recorded") {
    std::ostringstream o2, e2;
    REQUIRE(cmd_train(tmp.file("cfg.json"), 123, std::nullopt, tmp.file("run3"), o2, e2) == 0);
    const auto h = slurp(tmp.file("run3") + "/history.csv");
    REQUIRE(std::string(h.begin(), h.begin() + 10) == "# seed=123");
    REQUIRE(slurp(tmp.file("run3") + "/last.ckpt") != slurp(tmp.file("run1") + "/last.ckpt"));
  }

  SECTION("the dtype flag switches the stored parameter precision") {
    std::ostringstream o2, e2;
    REQUIRE(cmd_train(tmp.file("cfg.json"), std::nullopt, std::string("f64"), tmp.file("run4"),
                      o2, e2) == 0);
    REQUIRE(checkpoint_param_dtype(read_checkpoint(tmp.file("run4") + "/last.ckpt")) == 1);
    REQUIRE(checkpoint_param_dtype(read_checkpoint(tmp.file("run1") + "/last.ckpt")) == 0);
  }

  SECTION("denoise consumes the checkpoint and writes an image") {
    std::ostringstream o2, e2;
    const std::string input = (tmp.path / "ds" / "noisy" / "img0.png").string();
    REQUIRE(cmd_denoise(tmp.file("run1") + "/last.ckpt", input, tmp.file("den.png"), o2, e2) ==
            0);
    REQUIRE(o2.str().find("wrote " + tmp.file("den.png")) != std::string::npos);
    const ImageBuffer den = load_image(tmp.file("den.png"));
    REQUIRE(den.channels == 1);
    REQUIRE(den.height == 48);
    REQUIRE(den.width == 48);
  }

  SECTION("eval prints an aligned TSV with a trailing mean row") {
    std::ostringstream o2, e2;
    REQUIRE(cmd_eval(tmp.file("run1") + "/last.ckpt", (tmp.path / "ds").string(), false, o2,
                     e2) == 0);
    const auto rows = lines_of(o2.str());
    REQUIRE(rows.size() == 1 + 6 + 1);  // header + six images + mean
    REQUIRE(rows[0] == "name\tpsnr\tssim");
    REQUIRE(rows[1].substr(0, rows[1].find('\t')) == "img0.png");
    REQUIRE(rows.back().substr(0, 5) == "mean\t");

    std::ostringstream o3, e3;
    REQUIRE(cmd_eval(tmp.file("run1") + "/last.ckpt", (tmp.path / "ds").string(), true, o3,
                     e3) == 0);
    REQUIRE(lines_of(o3.str())[0] == "name\tpsnr\tssim\tpsnrb");
  }

  SECTION("decompose writes band previews and latent statistics") {
    std::ostringstream o2, e2;
    const std::string input = (tmp.path / "ds" / "noisy" / "img1.png").string();
    REQUIRE(cmd_decompose(tmp.file("run1") + "/last.ckpt", input, tmp.file("dec"), o2, e2) == 0);
    REQUIRE(fs::exists(tmp.file("dec") + "/lf_level1.png"));
    REQUIRE(fs::exists(tmp.file("dec") + "/latent_stats.json"));
    const auto bytes = slurp(tmp.file("dec") + "/latent_stats.json");
    const auto stats = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
    // 1-channel, 1-level plan: latent is 3 wide, one channel is the noise slice.
    REQUIRE(stats.at("latent_channels") == 3);
    REQUIRE(stats.at("noise_channels") == 1);
    REQUIRE(stats.at("content_channels") == 2);
    REQUIRE(stats.at("latent").at("mean").size() == 3);
    REQUIRE(stats.at("noise_slice").at("std").size() == 1);
  }

  SECTION("check passes on the trained checkpoint and on a fresh model") {
    std::ostringstream o2, e2;
    REQUIRE(cmd_check(tmp.file("run1") + "/last.ckpt", false, "", "f32", 1, false, o2, e2) == 0);
    REQUIRE(o2.str().find("all checks passed") != std::string::npos);
    for (const char* name : {"haar_roundtrip", "block_roundtrip", "bijectivity", "gradient"})
      REQUIRE(o2.str().find(std::string("check ") + name + ":") != std::string::npos);

    std::ostringstream o3, e3;
    REQUIRE(cmd_check("", true, tmp.file("cfg.json"), "f64", 3, false, o3, e3) == 0);

    // Injected inversion fault: the bijectivity invariant must fail loudly.
    std::ostringstream o4, e4;
    REQUIRE(cmd_check("", true, tmp.file("cfg.json"), "f32", 3, true, o4, e4) == 5);
    REQUIRE(e4.str().find("violated invariant: bijectivity") != std::string::npos);
    REQUIRE(o4.str().find("bijectivity") != std::string::npos);
  }
}

TEST_CASE("identity-initialized checkpoints reduce commands to wavelet algebra") {
  TempDir tmp("ident");
  // Fresh model: zero-initialized subnets make every coupling block the
  // identity, so the whole model is the Haar cascade and denoising is a
  // fixed linear map we can reproduce with direct wavelet calls.
  ModelConfig mc;
  mc.channels = 1;
  mc.levels = 2;
  mc.blocks = 2;
  PyramidModel<float> model(mc, 3);
  save_model(tmp.file("id.ckpt"), model);

  SECTION("denoise matches a hand-built Haar composition oracle") {
    ImageBuffer in = ImageBuffer::make(1, 16, 16);
    Rng rng(5);
    for (auto& v : in.data) v = static_cast<float>(rng.uniform());
    // 8-bit quantization happens at write time; the oracle must see the
    // quantized pixels the command will read back.
    for (auto& v : in.data) v = std::round(v * 255.0f) / 255.0f;
    save_png(tmp.file("in.png"), in);

    std::ostringstream out, err;
    REQUIRE(cmd_denoise(tmp.file("id.ckpt"), tmp.file("in.png"), tmp.file("out.png"), out,
                        err) == 0);

    // Oracle: two Haar analyses peeling one LF band each, zero the last k_n
    // latent channels, then synthesize back up.
    NoGradGuard ng;
    auto x = image_to_tensor<float>(load_image(tmp.file("in.png")));
    auto h1 = haar_dwt(x, HaarNorm::kAveraging);          // [1,4,8,8]
    auto s1 = split_channels(h1, {1, 3});                 // LF level 1 + HF
    auto h2 = haar_dwt(s1[1], HaarNorm::kAveraging);      // [1,12,4,4]
    auto s2 = split_channels(h2, {1, 11});                // LF level 2 + latent
    const int64_t k_n = model.plan().k_n;                 // llround(0.4*11) = 4
    auto latent = split_channels(s2[1], {11 - k_n, k_n});
    auto latent_hat = concat_channels<float>({latent[0], Tensor<float>::zeros({1, k_n, 4, 4})});
    auto up2 = haar_idwt(concat_channels<float>({s2[0], latent_hat}), HaarNorm::kAveraging);
    auto up1 = haar_idwt(concat_channels<float>({s1[0], up2}), HaarNorm::kAveraging);
    ImageBuffer expect = tensor_to_image(up1);
    for (auto& v : expect.data) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;

    const ImageBuffer got = load_image(tmp.file("out.png"));
    REQUIRE(got.height == 16);
    REQUIRE(got.width == 16);
    for (int64_t i = 0; i < got.numel(); ++i)
      REQUIRE(got.data[size_t(i)] == Catch::Approx(expect.data[size_t(i)]).margin(1e-6));
  }

  SECTION("denoise center-crops and reports indivisible inputs") {
    ImageBuffer odd = ImageBuffer::make(1, 19, 17, 0.25f);
    save_png(tmp.file("odd.png"), odd);
    std::ostringstream out, err;
    REQUIRE(cmd_denoise(tmp.file("id.ckpt"), tmp.file("odd.png"), tmp.file("odd_out.png"), out,
                        err) == 0);
    REQUIRE(out.str().find("center-cropped") != std::string::npos);
    const ImageBuffer got = load_image(tmp.file("odd_out.png"));
    REQUIRE(got.height == 16);  // 19 -> 16 at divisor 4
    REQUIRE(got.width == 16);
  }

  SECTION("constant clean==noisy pairs hit the PSNR cap under eval") {
    // Constant input: every Haar detail coefficient is exactly zero, so
    // zeroing the noise slice is a no-op and the model returns the input.
    fs::create_directories(tmp.path / "flat" / "clean");
    fs::create_directories(tmp.path / "flat" / "noisy");
    ImageBuffer flat = ImageBuffer::make(1, 16, 16, 100.0f / 255.0f);
    save_png((tmp.path / "flat" / "clean" / "a.png").string(), flat);
    save_png((tmp.path / "flat" / "noisy" / "a.png").string(), flat);
    std::ostringstream out, err;
    REQUIRE(cmd_eval(tmp.file("id.ckpt"), tmp.file("flat"), false, out, err) == 0);
    const auto rows = lines_of(out.str());
    REQUIRE(rows.back() == "mean\t100.0000\t1.000000");
  }

  SECTION("decompose on a constant image yields constant bands, zero stats") {
    ImageBuffer flat = ImageBuffer::make(1, 16, 16, 0.5f);
    save_png(tmp.file("flat.png"), flat);
    std::ostringstream out, err;
    REQUIRE(cmd_decompose(tmp.file("id.ckpt"), tmp.file("flat.png"), tmp.file("dec"), out,
                          err) == 0);
    REQUIRE(fs::exists(tmp.file("dec") + "/lf_level1.png"));
    REQUIRE(fs::exists(tmp.file("dec") + "/lf_level2.png"));
    const ImageBuffer lf1 = load_image(tmp.file("dec") + "/lf_level1.png");
    REQUIRE(lf1.height == 8);
    for (float v : lf1.data) REQUIRE(v == lf1.data[0]);
    const auto bytes = slurp(tmp.file("dec") + "/latent_stats.json");
    const auto stats = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
    for (const auto& v : stats.at("latent").at("std")) REQUIRE(double(v) == 0.0);
    for (const auto& v : stats.at("latent").at("mean")) REQUIRE(double(v) == 0.0);
  }
}

TEST_CASE("commands report failures with documented exit codes") {
  TempDir tmp("codes");

  std::ostringstream out, err;
  SECTION("train: unreadable or invalid config is exit 2") {
    REQUIRE(cmd_train(tmp.file("absent.json"), std::nullopt, std::nullopt, std::nullopt, out,
                      err) == 2);
    write_text(tmp.file("bad.json"), R"({"model":{"blokcs":2}})");
    REQUIRE(cmd_train(tmp.file("bad.json"), std::nullopt, std::nullopt, std::nullopt, out, err) ==
            2);
    write_text(tmp.file("baddtype.json"), "{}");
    REQUIRE(cmd_train(tmp.file("baddtype.json"), std::nullopt, std::string("f16"), std::nullopt,
                      out, err) == 2);
    REQUIRE(err.str().find("error:") != std::string::npos);
  }
  SECTION("train: missing dataset is exit 3") {
    write_text(tmp.file("cfg.json"),
               R"({"train":{"iterations":1},"data":{"train_root":")" + tmp.file("nope") +
                   R"("}})");
    REQUIRE(cmd_train(tmp.file("cfg.json"), std::nullopt, std::nullopt, tmp.file("out"), out,
                      err) == 3);
    REQUIRE(err.str().find(tmp.file("nope")) != std::string::npos);
    // No data paths at all is also a dataset error.
    write_text(tmp.file("cfg2.json"), "{}");
    REQUIRE(cmd_train(tmp.file("cfg2.json"), std::nullopt, std::nullopt, tmp.file("out2"), out,
                      err) == 3);
  }
  SECTION("checkpoint consumers: bad checkpoint is exit 2, bad input is exit 3") {
    write_text(tmp.file("junk.ckpt"), "this is not a checkpoint");
    REQUIRE(cmd_denoise(tmp.file("junk.ckpt"), tmp.file("x.png"), tmp.file("y.png"), out, err) ==
            2);
    REQUIRE(cmd_eval(tmp.file("junk.ckpt"), tmp.file("ds"), false, out, err) == 2);
    REQUIRE(cmd_decompose(tmp.file("junk.ckpt"), tmp.file("x.png"), tmp.file("d"), out, err) ==
            2);
    REQUIRE(cmd_check(tmp.file("junk.ckpt"), false, "", "f32", 1, false, out, err) == 2);

    // A real checkpoint but an unreadable image / unpaired dataset.
    ModelConfig mc;
    mc.channels = 1;
    mc.levels = 1;
    mc.blocks = 1;
    mc.subnet.kind = SubnetKind::kResidual;
    mc.subnet.growth = 4;
    PyramidModel<float> model(mc, 1);
    save_model(tmp.file("m.ckpt"), model);
    REQUIRE(cmd_denoise(tmp.file("m.ckpt"), tmp.file("absent.png"), tmp.file("y.png"), out,
                        err) == 3);
    fs::create_directories(tmp.path / "unpaired" / "clean");
    fs::create_directories(tmp.path / "unpaired" / "noisy");
    ImageBuffer img = ImageBuffer::make(1, 8, 8);
    save_png((tmp.path / "unpaired" / "clean" / "only.png").string(), img);
    REQUIRE(cmd_eval(tmp.file("m.ckpt"), tmp.file("unpaired"), false, out, err) == 3);
    REQUIRE(err.str().find("only.png") != std::string::npos);
  }
  SECTION("check: fresh model with a broken config is exit 2") {
    write_text(tmp.file("bad.json"), "{nope");
    REQUIRE(cmd_check("", true, tmp.file("bad.json"), "f32", 1, false, out, err) == 2);
  }
}

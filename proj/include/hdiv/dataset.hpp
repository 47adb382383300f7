// SPDX-License-Identifier: Apache-2.0
//
// Paired clean/degraded datasets plus the synthetic-degradation, patching,
// and augmentation steps of the training pipeline. Everything here is
// deterministic under a fixed seed.
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hdiv/common.hpp"
#include "hdiv/image.hpp"

namespace hdiv {

struct ImagePair {
  std::string clean;
  std::string noisy;
};

class PairDataset {
 public:
  // Either `<root>/manifest.tsv` (one "clean<TAB>noisy" line per pair, paths
  // relative to root) or the `<root>/clean/*` + `<root>/noisy/*` convention
  // with matching filenames.
  static PairDataset from_root(const std::string& root) {
    namespace fs = std::filesystem;
    PairDataset ds;
    const fs::path rootp(root);
    if (!fs::is_directory(rootp)) throw DataError("dataset root not found: " + root);
    const fs::path manifest = rootp / "manifest.tsv";
    if (fs::exists(manifest)) {
      std::ifstream in(manifest);
      if (!in) throw DataError("cannot read manifest: " + manifest.string());
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
          throw DataError("manifest line missing tab separator: " + line);
        ds.pairs_.push_back({(rootp / line.substr(0, tab)).string(),
                             (rootp / line.substr(tab + 1)).string()});
      }
    } else {
      const fs::path clean_dir = rootp / "clean", noisy_dir = rootp / "noisy";
      if (!fs::is_directory(clean_dir))
        throw DataError("missing clean image directory: " + clean_dir.string());
      if (!fs::is_directory(noisy_dir))
        throw DataError("missing noisy image directory: " + noisy_dir.string());
      std::vector<std::string> names;
      for (const auto& e : fs::directory_iterator(clean_dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (has_suffix(name, ".png") || has_suffix(name, ".pgm")) names.push_back(name);
      }
      std::sort(names.begin(), names.end());  // deterministic ordering
      for (const auto& name : names) {
        const fs::path noisy = noisy_dir / name;
        if (!fs::exists(noisy)) throw DataError("unpaired clean image: " + name);
        ds.pairs_.push_back({(clean_dir / name).string(), noisy.string()});
      }
    }
    if (ds.pairs_.empty()) throw DataError("dataset is empty: " + root);
    return ds;
  }

  size_t size() const { return pairs_.size(); }
  const ImagePair& pair(size_t i) const { return pairs_.at(i); }

  std::pair<ImageBuffer, ImageBuffer> load(size_t i) const {
    const auto& p = pairs_.at(i);
    auto clean = load_image(p.clean);
    auto noisy = load_image(p.noisy);
    if (clean.height != noisy.height || clean.width != noisy.width ||
        clean.channels != noisy.channels)
      throw DataError("paired images disagree on shape: " + p.clean + " vs " + p.noisy);
    return {std::move(clean), std::move(noisy)};
  }

 private:
  std::vector<ImagePair> pairs_;
};

// Additive white Gaussian noise in [0,1] units. Deliberately NOT clamped so
// the noise stays zero-mean; clamping happens only at 8-bit write time.
inline ImageBuffer add_awgn(const ImageBuffer& img, double sigma, uint64_t seed) {
  if (sigma < 0) throw DataError("add_awgn: sigma must be nonnegative");
  ImageBuffer out = img;
  if (sigma == 0) return out;
  Rng rng(seed);
  for (auto& v : out.data) v = static_cast<float>(v + sigma * rng.normal());
  return out;
}

// Mixed Poisson-Gaussian degradation: Poisson(x*p)/p + N(0, sigma^2). The
// Poisson draw uses inversion by sequential search at these small means.
inline ImageBuffer add_poisson_gaussian(const ImageBuffer& img, double peak, double sigma,
                                        uint64_t seed) {
  if (peak <= 0) throw DataError("add_poisson_gaussian: peak must be positive");
  if (sigma < 0) throw DataError("add_poisson_gaussian: sigma must be nonnegative");
  ImageBuffer out = img;
  Rng rng(seed);
  for (auto& v : out.data) {
    const double lambda = std::max(0.0, static_cast<double>(v)) * peak;
    double u = rng.uniform();
    int64_t k = 0;
    double p = std::exp(-lambda), cdf = p;
    while (u > cdf && k < 10 * (1 + static_cast<int64_t>(lambda))) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    v = static_cast<float>(static_cast<double>(k) / peak + sigma * rng.normal());
  }
  return out;
}

// One crop window applied identically to both images.
inline std::pair<ImageBuffer, ImageBuffer> sample_patch(const ImageBuffer& clean,
                                                        const ImageBuffer& noisy,
                                                        int64_t size, Rng& rng) {
  if (size > clean.height || size > clean.width)
    throw DataError("patch size " + std::to_string(size) + " exceeds image " +
                    std::to_string(clean.height) + "x" + std::to_string(clean.width));
  const int64_t y0 = rng.uniform_int(clean.height - size + 1);
  const int64_t x0 = rng.uniform_int(clean.width - size + 1);
  auto crop = [&](const ImageBuffer& src) {
    auto out = ImageBuffer::make(src.channels, size, size);
    for (int64_t c = 0; c < src.channels; ++c)
      for (int64_t y = 0; y < size; ++y)
        std::memcpy(&out.at(c, y, 0), &src.at(c, y0 + y, x0),
                    static_cast<size_t>(size) * sizeof(float));
    return out;
  };
  return {crop(clean), crop(noisy)};
}

namespace detail {

inline ImageBuffer hflip(const ImageBuffer& img) {
  auto out = ImageBuffer::make(img.channels, img.height, img.width);
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

inline ImageBuffer vflip(const ImageBuffer& img) {
  auto out = ImageBuffer::make(img.channels, img.height, img.width);
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t y = 0; y < img.height; ++y)
      std::memcpy(&out.at(c, y, 0), &img.at(c, img.height - 1 - y, 0),
                  static_cast<size_t>(img.width) * sizeof(float));
  return out;
}

// 90 degrees counterclockwise.
inline ImageBuffer rot90(const ImageBuffer& img) {
  auto out = ImageBuffer::make(img.channels, img.width, img.height);
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < img.width; ++x)
        out.at(c, img.width - 1 - x, y) = img.at(c, y, x);
  return out;
}

}  // namespace detail

struct AugmentChoice {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;  // 0..3
};

inline AugmentChoice draw_augment(Rng& rng) {
  AugmentChoice c;
  c.hflip = rng.uniform() < 0.5;
  c.vflip = rng.uniform() < 0.5;
  c.quarter_turns = static_cast<int>(rng.uniform_int(4));
  return c;
}

inline ImageBuffer apply_augment(const ImageBuffer& img, const AugmentChoice& c) {
  if (c.quarter_turns % 2 == 1 && img.height != img.width)
    throw DataError("90-degree rotation requires square patches");
  ImageBuffer out = img;
  if (c.hflip) out = detail::hflip(out);
  if (c.vflip) out = detail::vflip(out);
  for (int k = 0; k < c.quarter_turns; ++k) out = detail::rot90(out);
  return out;
}

// The same random transform applied to both halves of the pair.
inline std::pair<ImageBuffer, ImageBuffer> augment(const ImageBuffer& clean,
                                                   const ImageBuffer& noisy, Rng& rng) {
  const auto choice = draw_augment(rng);
  return {apply_augment(clean, choice), apply_augment(noisy, choice)};
}

}  // namespace hdiv

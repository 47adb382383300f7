// SPDX-License-Identifier: Apache-2.0
//
// Image quality metrics: PSNR, single-scale SSIM, and PSNR-B (PSNR with a
// blocking-effect penalty). All operate on [0,1] float images; inputs are
// clamped to [0, peak] first, and decibel values are capped at 100.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hdiv/image.hpp"

namespace hdiv {

inline constexpr double kPsnrCapDb = 100.0;

namespace detail {

inline void require_same_image_shape(const char* op, const ImageBuffer& a,
                                     const ImageBuffer& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw ShapeError(std::string(op) + ": image shapes differ");
}

inline std::vector<float> clamped(const ImageBuffer& img, double peak) {
  std::vector<float> out(img.data);
  const float hi = static_cast<float>(peak);
  for (auto& v : out) v = std::clamp(v, 0.0f, hi);
  return out;
}

inline double db_from_mse(double mse, double peak) {
  if (mse <= 0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

// BT.601 luminance of a clamped image; grayscale passes through.
inline std::vector<double> luminance(const std::vector<float>& data, int64_t channels,
                                     int64_t plane) {
  std::vector<double> y(static_cast<size_t>(plane));
  if (channels == 1) {
    for (int64_t i = 0; i < plane; ++i) y[i] = data[i];
  } else {
    for (int64_t i = 0; i < plane; ++i)
      y[i] = 0.299 * data[i] + 0.587 * data[plane + i] + 0.114 * data[2 * plane + i];
  }
  return y;
}

}  // namespace detail

inline double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0) {
  detail::require_same_image_shape("psnr", a, b);
  const auto ca = detail::clamped(a, peak), cb = detail::clamped(b, peak);
  double mse = 0;
  for (size_t i = 0; i < ca.size(); ++i) {
    const double d = static_cast<double>(ca[i]) - static_cast<double>(cb[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(ca.size());
  return detail::db_from_mse(mse, peak);
}

// Single-scale SSIM with the standard 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03. Only fully valid window positions contribute;
// multichannel images average their per-channel scores.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0) {
  detail::require_same_image_shape("ssim", a, b);
  constexpr int64_t kWin = 11;
  if (a.height < kWin || a.width < kWin)
    throw ShapeError("ssim: image smaller than the 11x11 window");
  const auto ca = detail::clamped(a, peak), cb = detail::clamped(b, peak);

  // Normalized Gaussian window.
  double w[kWin][kWin], wsum = 0;
  for (int64_t i = 0; i < kWin; ++i)
    for (int64_t j = 0; j < kWin; ++j) {
      const double dy = static_cast<double>(i) - 5.0, dx = static_cast<double>(j) - 5.0;
      w[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      wsum += w[i][j];
    }
  for (auto& row : w)
    for (auto& v : row) v /= wsum;

  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const int64_t plane = a.height * a.width;
  double total = 0;
  for (int64_t c = 0; c < a.channels; ++c) {
    const float* pa = ca.data() + c * plane;
    const float* pb = cb.data() + c * plane;
    double acc = 0;
    int64_t count = 0;
    for (int64_t y = 0; y + kWin <= a.height; ++y)
      for (int64_t x = 0; x + kWin <= a.width; ++x) {
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int64_t i = 0; i < kWin; ++i)
          for (int64_t j = 0; j < kWin; ++j) {
            const double va = pa[(y + i) * a.width + (x + j)];
            const double vb = pb[(y + i) * a.width + (x + j)];
            const double wk = w[i][j];
            ma += wk * va;
            mb += wk * vb;
            maa += wk * va * va;
            mbb += wk * vb * vb;
            mab += wk * va * vb;
          }
        const double var_a = maa - ma * ma, var_b = mbb - mb * mb, cov = mab - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(a.channels);
}

// PSNR-B: PSNR whose error term adds a blocking-effect factor measured on the
// degraded image `a`. Differences across block-aligned neighbor pairs (D_b)
// are compared with all other neighbor differences (D_nb); horizontal and
// vertical pairs pool into the same statistics. RGB images are evaluated on
// BT.601 luminance. Note the asymmetry: boundary statistics come from `a`
// only.
inline double psnr_b(const ImageBuffer& a, const ImageBuffer& b, int64_t block = 8,
                     double peak = 1.0) {
  detail::require_same_image_shape("psnr_b", a, b);
  if (block < 2) throw ShapeError("psnr_b: block size must be >= 2");
  if (a.height < block || a.width < block)
    throw ShapeError("psnr_b: image smaller than one block");
  const int64_t plane = a.height * a.width;
  const auto ya = detail::luminance(detail::clamped(a, peak), a.channels, plane);
  const auto yb = detail::luminance(detail::clamped(b, peak), b.channels, plane);

  double mse = 0;
  for (int64_t i = 0; i < plane; ++i) {
    const double d = ya[i] - yb[i];
    mse += d * d;
  }
  mse /= static_cast<double>(plane);

  double sum_b = 0, sum_nb = 0;
  int64_t n_b = 0, n_nb = 0;
  const int64_t h = a.height, w = a.width;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x + 1 < w; ++x) {
      const double d = ya[y * w + x] - ya[y * w + x + 1];
      if ((x + 1) % block == 0) {
        sum_b += d * d;
        ++n_b;
      } else {
        sum_nb += d * d;
        ++n_nb;
      }
    }
  for (int64_t y = 0; y + 1 < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double d = ya[y * w + x] - ya[(y + 1) * w + x];
      if ((y + 1) % block == 0) {
        sum_b += d * d;
        ++n_b;
      } else {
        sum_nb += d * d;
        ++n_nb;
      }
    }
  double bef = 0;
  if (n_b > 0 && n_nb > 0) {
    const double d_b = sum_b / static_cast<double>(n_b);
    const double d_nb = sum_nb / static_cast<double>(n_nb);
    if (d_b > d_nb) {
      const double eta = std::log2(static_cast<double>(block)) /
                         std::log2(static_cast<double>(std::min(h, w)));
      bef = eta * (d_b - d_nb);
    }
  }
  return detail::db_from_mse(mse + bef, peak);
}

}  // namespace hdiv

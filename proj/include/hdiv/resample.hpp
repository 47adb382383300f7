// SPDX-License-Identifier: Apache-2.0
//
// Anti-aliased bicubic downsampling. The Keys cubic kernel (a = -0.5) is
// stretched by the scale factor so it acts as a low-pass filter, weights are
// renormalized to sum to one, and borders replicate the edge pixel. Only the
// power-of-two factors used by the pyramid guides are accepted.
#pragma once

#include <cmath>
#include <vector>

#include "hdiv/image.hpp"

namespace hdiv {

namespace detail {

// Keys cubic convolution kernel with a = -0.5, support |t| < 2.
inline double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

struct ResampleTap {
  int64_t first;                // first source index (clamped later)
  std::vector<double> weights;  // normalized kernel weights
};

// One tap table per output position along an axis of length `in`.
inline std::vector<ResampleTap> make_taps(int64_t in, int64_t factor) {
  const int64_t out = in / factor;
  const double f = static_cast<double>(factor);
  std::vector<ResampleTap> taps(static_cast<size_t>(out));
  for (int64_t i = 0; i < out; ++i) {
    // Output pixel centers sit at (i + 0.5) * factor - 0.5 in source space.
    const double center = (static_cast<double>(i) + 0.5) * f - 0.5;
    const int64_t lo = static_cast<int64_t>(std::ceil(center - 2.0 * f));
    const int64_t hi = static_cast<int64_t>(std::floor(center + 2.0 * f));
    auto& tap = taps[i];
    tap.first = lo;
    tap.weights.resize(static_cast<size_t>(hi - lo + 1));
    double sum = 0;
    for (int64_t j = lo; j <= hi; ++j) {
      const double w = cubic_kernel((static_cast<double>(j) - center) / f);
      tap.weights[j - lo] = w;
      sum += w;
    }
    for (auto& w : tap.weights) w /= sum;
  }
  return taps;
}

}  // namespace detail

inline ImageBuffer bicubic_downsample(const ImageBuffer& img, int64_t factor) {
  if (factor != 2 && factor != 4 && factor != 8)
    throw DataError("bicubic_downsample: factor must be 2, 4, or 8");
  if (img.height % factor != 0 || img.width % factor != 0)
    throw DataError("bicubic_downsample: dimensions not divisible by the factor");

  const auto xtaps = detail::make_taps(img.width, factor);
  const auto ytaps = detail::make_taps(img.height, factor);
  const int64_t oh = img.height / factor, ow = img.width / factor;

  auto out = ImageBuffer::make(img.channels, oh, ow);
  // Separable: filter rows into an intermediate, then columns.
  std::vector<double> mid(static_cast<size_t>(img.height * ow));
  for (int64_t c = 0; c < img.channels; ++c) {
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        const auto& tap = xtaps[x];
        double acc = 0;
        for (size_t k = 0; k < tap.weights.size(); ++k) {
          const int64_t sx = std::clamp<int64_t>(tap.first + static_cast<int64_t>(k), 0,
                                                 img.width - 1);
          acc += tap.weights[k] * img.at(c, y, sx);
        }
        mid[y * ow + x] = acc;
      }
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        const auto& tap = ytaps[y];
        double acc = 0;
        for (size_t k = 0; k < tap.weights.size(); ++k) {
          const int64_t sy = std::clamp<int64_t>(tap.first + static_cast<int64_t>(k), 0,
                                                 img.height - 1);
          acc += tap.weights[k] * mid[sy * ow + x];
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
  }
  return out;
}

}  // namespace hdiv

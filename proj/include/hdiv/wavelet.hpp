// SPDX-License-Identifier: Apache-2.0
//
// Single-level 2D Haar transform over NCHW tensors. Each 2x2 block
//   a b
//   c d
// maps to four subband coefficients, and every input channel expands into
// four output channels ordered [LL, HL, LH, HH] (grouped per subband: all LL
// channels first, then all HL, ...). Spatial size halves in each dimension.
//
// Two normalizations:
//   * kAveraging: LL is the block mean (divide by 4). Forward is H/4 with
//     H the 4x4 symmetric sign matrix satisfying H*H = 4I, so the exact
//     inverse is H itself and |det(H/4)| = 1/16 per block.
//   * kOrthonormal: divide by 2 both ways; the map is orthogonal, so the
//     inverse is the transform again and the volume change is zero.
#pragma once

#include <cmath>
#include <vector>

#include "hdiv/tensor.hpp"

namespace hdiv {

enum class HaarNorm { kAveraging, kOrthonormal };

namespace detail {

// Applies y = (H/den) * x per 2x2 block where H is its own unscaled inverse
// (H*H = 4I). Both dwt and idwt reduce to this stencil with different
// denominators and src/dst layouts, as does the adjoint (H is symmetric).
template <class S>
struct HaarStencil {
  S den;
  void block(S a, S b, S c, S d, S& ll, S& hl, S& lh, S& hh) const {
    ll = (a + b + c + d) / den;
    hl = (a - b + c - d) / den;
    lh = (a + b - c - d) / den;
    hh = (a - b - c + d) / den;
  }
};

}  // namespace detail

// [N, C, H, W] -> [N, 4C, H/2, W/2]; H and W must be even.
template <class S>
Tensor<S> haar_dwt(const Tensor<S>& x, HaarNorm norm) {
  detail::require_nchw("haar_dwt", x);
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("haar_dwt: spatial dims must be even, got " + shape_str(x.shape()));
  const int64_t oh = h / 2, ow = w / 2;
  const detail::HaarStencil<S> fwd{norm == HaarNorm::kAveraging ? S(4) : S(2)};

  std::vector<S> out(static_cast<size_t>(n * 4 * c * oh * ow));
  const int64_t in_plane = h * w, out_plane = oh * ow;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const S* src = x.values().data() + (i * c + ch) * in_plane;
      S* base = out.data() + i * 4 * c * out_plane;
      S* ll = base + (0 * c + ch) * out_plane;
      S* hl = base + (1 * c + ch) * out_plane;
      S* lh = base + (2 * c + ch) * out_plane;
      S* hh = base + (3 * c + ch) * out_plane;
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t xx = 0; xx < ow; ++xx) {
          const S a = src[(2 * y) * w + 2 * xx];
          const S b = src[(2 * y) * w + 2 * xx + 1];
          const S cc = src[(2 * y + 1) * w + 2 * xx];
          const S d = src[(2 * y + 1) * w + 2 * xx + 1];
          const int64_t o = y * ow + xx;
          fwd.block(a, b, cc, d, ll[o], hl[o], lh[o], hh[o]);
        }
      }
    }
  }

  // Adjoint of y = (H/den) x is (H/den) applied to the output gradient,
  // scattered back through the same index map.
  auto xn = x.node();
  const S den = fwd.den;
  return Tensor<S>::make_op(
      "haar_dwt", Shape{n, 4 * c, oh, ow}, std::move(out),
      [xn, n, c, oh, ow, den](auto& self) {
        if (!xn->requires_grad) return;
        const int64_t w = 2 * ow, out_plane = oh * ow, in_plane = 2 * oh * w;
        const detail::HaarStencil<S> adj{den};
        auto& g = xn->grad_buf();
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t ch = 0; ch < c; ++ch) {
            const S* base = self.grad.data() + i * 4 * c * out_plane;
            const S* ll = base + (0 * c + ch) * out_plane;
            const S* hl = base + (1 * c + ch) * out_plane;
            const S* lh = base + (2 * c + ch) * out_plane;
            const S* hh = base + (3 * c + ch) * out_plane;
            S* dst = g.data() + (i * c + ch) * in_plane;
            for (int64_t y = 0; y < oh; ++y) {
              for (int64_t xx = 0; xx < ow; ++xx) {
                const int64_t o = y * ow + xx;
                S ga, gb, gc, gd;
                adj.block(ll[o], hl[o], lh[o], hh[o], ga, gb, gc, gd);
                dst[(2 * y) * w + 2 * xx] += ga;
                dst[(2 * y) * w + 2 * xx + 1] += gb;
                dst[(2 * y + 1) * w + 2 * xx] += gc;
                dst[(2 * y + 1) * w + 2 * xx + 1] += gd;
              }
            }
          }
        }
      },
      x);
}

// [N, 4C, H, W] -> [N, C, 2H, 2W]; exact inverse of haar_dwt at the same norm.
template <class S>
Tensor<S> haar_idwt(const Tensor<S>& x, HaarNorm norm) {
  detail::require_nchw("haar_idwt", x);
  const int64_t n = x.dim(0), c4 = x.dim(1), oh = x.dim(2), ow = x.dim(3);
  if (c4 % 4 != 0)
    throw ShapeError("haar_idwt: channel count must be a multiple of 4, got " +
                     shape_str(x.shape()));
  const int64_t c = c4 / 4;
  const int64_t h = 2 * oh, w = 2 * ow;
  // Inverse of H/4 is H (den 1); inverse of H/2 is H/2.
  const detail::HaarStencil<S> inv{norm == HaarNorm::kAveraging ? S(1) : S(2)};

  std::vector<S> out(static_cast<size_t>(n * c * h * w));
  const int64_t in_plane = oh * ow, out_plane = h * w;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const S* base = x.values().data() + i * c4 * in_plane;
      const S* ll = base + (0 * c + ch) * in_plane;
      const S* hl = base + (1 * c + ch) * in_plane;
      const S* lh = base + (2 * c + ch) * in_plane;
      const S* hh = base + (3 * c + ch) * in_plane;
      S* dst = out.data() + (i * c + ch) * out_plane;
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t xx = 0; xx < ow; ++xx) {
          const int64_t o = y * ow + xx;
          S a, b, cc, d;
          inv.block(ll[o], hl[o], lh[o], hh[o], a, b, cc, d);
          dst[(2 * y) * w + 2 * xx] = a;
          dst[(2 * y) * w + 2 * xx + 1] = b;
          dst[(2 * y + 1) * w + 2 * xx] = cc;
          dst[(2 * y + 1) * w + 2 * xx + 1] = d;
        }
      }
    }
  }

  auto xn = x.node();
  const S den = inv.den;
  return Tensor<S>::make_op(
      "haar_idwt", Shape{n, c, h, w}, std::move(out),
      [xn, n, c, oh, ow, den](auto& self) {
        if (!xn->requires_grad) return;
        const int64_t w = 2 * ow, in_plane = oh * ow, out_plane = 2 * oh * w;
        const detail::HaarStencil<S> adj{den};
        auto& g = xn->grad_buf();
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t ch = 0; ch < c; ++ch) {
            const S* src = self.grad.data() + (i * c + ch) * out_plane;
            S* base = g.data() + i * 4 * c * in_plane;
            S* ll = base + (0 * c + ch) * in_plane;
            S* hl = base + (1 * c + ch) * in_plane;
            S* lh = base + (2 * c + ch) * in_plane;
            S* hh = base + (3 * c + ch) * in_plane;
            for (int64_t y = 0; y < oh; ++y) {
              for (int64_t xx = 0; xx < ow; ++xx) {
                const S a = src[(2 * y) * w + 2 * xx];
                const S b = src[(2 * y) * w + 2 * xx + 1];
                const S cc = src[(2 * y + 1) * w + 2 * xx];
                const S d = src[(2 * y + 1) * w + 2 * xx + 1];
                const int64_t o = y * ow + xx;
                S ga, gb, gc, gd;
                adj.block(a, b, cc, d, ga, gb, gc, gd);
                ll[o] += ga;
                hl[o] += gb;
                lh[o] += gc;
                hh[o] += gd;
              }
            }
          }
        }
      },
      x);
}

// Log |det J| of haar_dwt applied to a [C, H, W] input. The averaging form
// scales volume by 1/16 per 2x2 block per channel (C*H*W/4 blocks); the
// orthonormal form preserves volume.
inline double haar_log_det(HaarNorm norm, int64_t c, int64_t h, int64_t w) {
  if (norm == HaarNorm::kOrthonormal) return 0.0;
  const double blocks = static_cast<double>(c) * static_cast<double>(h) *
                        static_cast<double>(w) / 4.0;
  return blocks * std::log(1.0 / 16.0);
}

}  // namespace hdiv

// SPDX-License-Identifier: Apache-2.0
//
// 2D convolution (stride 1, zero "same" padding) as im2col + GEMM. The column
// matrix is rebuilt in the backward pass instead of being cached; the model is
// deep in tiny convolutions, so trading FLOPs for memory is the right call.
#pragma once

#include <Eigen/Core>
#include <vector>

#include "hdiv/tensor.hpp"

namespace hdiv {

namespace detail {

template <class S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Scatter one sample's CHW plane into columns: rows = C*K*K, cols = H*W.
template <class S>
void im2col(const S* src, int64_t c, int64_t h, int64_t w, int64_t k, S* cols) {
  const int64_t pad = k / 2;
  const int64_t plane = h * w;
  int64_t row = 0;
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx, ++row) {
        S* dst = cols + row * plane;
        const S* chan = src + ch * plane;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst + y * w, dst + (y + 1) * w, S(0));
            continue;
          }
          for (int64_t x = 0; x < w; ++x) {
            const int64_t sx = x + kx - pad;
            dst[y * w + x] = (sx < 0 || sx >= w) ? S(0) : chan[sy * w + sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulate columns back into a CHW plane.
template <class S>
void col2im_add(const S* cols, int64_t c, int64_t h, int64_t w, int64_t k, S* dst) {
  const int64_t pad = k / 2;
  const int64_t plane = h * w;
  int64_t row = 0;
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx, ++row) {
        const S* src = cols + row * plane;
        S* chan = dst + ch * plane;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int64_t x = 0; x < w; ++x) {
            const int64_t sx = x + kx - pad;
            if (sx >= 0 && sx < w) chan[sy * w + sx] += src[y * w + x];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [N, C_in, H, W], weight: [C_out, C_in, K, K], bias: [C_out]. Only the
// size-preserving padding (K-1)/2 is supported; pad = -1 selects it.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 int64_t pad = -1) {
  detail::require_nchw("conv2d", x);
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [C_out, C_in, K, K]");
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
    throw ShapeError("conv2d: bias must be [C_out]");
  const int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in || weight.dim(3) != k)
    throw ShapeError("conv2d: weight shape " + shape_str(weight.shape()) +
                     " does not match input " + shape_str(x.shape()));
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (pad != -1 && pad != (k - 1) / 2)
    throw ShapeError("conv2d: only size-preserving padding (K-1)/2 is supported");

  const int64_t plane = h * w;
  const int64_t rows = c_in * k * k;
  std::vector<S> out(static_cast<size_t>(n * c_out * plane));
  std::vector<S> cols(static_cast<size_t>(rows * plane));

  using Mat = detail::MatrixRM<S>;
  Eigen::Map<const Mat> wmat(weight.values().data(), c_out, rows);
  for (int64_t i = 0; i < n; ++i) {
    detail::im2col(x.values().data() + i * c_in * plane, c_in, h, w, k, cols.data());
    Eigen::Map<const Mat> cmat(cols.data(), rows, plane);
    Eigen::Map<Mat> omat(out.data() + i * c_out * plane, c_out, plane);
    omat.noalias() = wmat * cmat;
    for (int64_t oc = 0; oc < c_out; ++oc) omat.row(oc).array() += bias.values()[oc];
  }

  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return Tensor<S>::make_op(
      "conv2d", Shape{n, c_out, h, w}, std::move(out),
      [xn, wn, bn, n, c_in, h, w, k, c_out](auto& self) {
        const int64_t plane = h * w;
        const int64_t rows = c_in * k * k;
        std::vector<S> cols(static_cast<size_t>(rows * plane));
        using Mat = detail::MatrixRM<S>;
        Eigen::Map<const Mat> wmat(wn->value.data(), c_out, rows);
        for (int64_t i = 0; i < n; ++i) {
          Eigen::Map<const Mat> gy(self.grad.data() + i * c_out * plane, c_out, plane);
          if (wn->requires_grad || bn->requires_grad) {
            if (bn->requires_grad) {
              // Fixed-order accumulation: Eigen's vectorized sum() peels to the
              // buffer's alignment, which varies across runs and breaks
              // bit-for-bit reproducibility.
              auto& gb = bn->grad_buf();
              const S* g = self.grad.data() + i * c_out * plane;
              for (int64_t oc = 0; oc < c_out; ++oc) {
                double acc = 0;
                for (int64_t p = 0; p < plane; ++p)
                  acc += static_cast<double>(g[oc * plane + p]);
                gb[oc] += static_cast<S>(acc);
              }
            }
            if (wn->requires_grad) {
              detail::im2col(xn->value.data() + i * c_in * plane, c_in, h, w, k, cols.data());
              Eigen::Map<const Mat> cmat(cols.data(), rows, plane);
              Eigen::Map<Mat> gw(wn->grad_buf().data(), c_out, rows);
              gw.noalias() += gy * cmat.transpose();
            }
          }
          if (xn->requires_grad) {
            Eigen::Map<Mat> gcols(cols.data(), rows, plane);
            gcols.noalias() = wmat.transpose() * gy;
            detail::col2im_add(cols.data(), c_in, h, w, k,
                               xn->grad_buf().data() + i * c_in * plane);
          }
        }
      },
      x, weight, bias);
}

}  // namespace hdiv

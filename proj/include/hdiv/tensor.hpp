// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense N-d arrays. Tensors are immutable
// value handles onto graph nodes; backward() walks the recorded tape. No
// broadcasting beyond scalar constants, by design.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hdiv/common.hpp"

namespace hdiv {

// Thread-local switch: when disabled, ops produce detached outputs and no tape
// is recorded (inference mode).
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::vector<S>& grad_buf() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

template <class S>
inline void check_all_finite(const char* op, const std::vector<S>& v) {
  for (const S x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

}  // namespace detail

template <class S>
class Tensor {
  using Node = detail::TensorNode<S>;

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return leaf(std::move(shape), {}, requires_grad, /*fill=*/S(0));
  }
  static Tensor full(Shape shape, S value) {
    return leaf(std::move(shape), {}, false, value);
  }
  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data length does not match shape " + shape_str(shape));
    detail::check_all_finite("from_data", data);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad && GradMode::enabled();
    return Tensor(std::move(n));
  }
  static Tensor scalar(S v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op_name() const { return node_->op; }

  const std::vector<S>& values() const { return node_->value; }
  // Mutable access is reserved for leaves (parameter updates, loaders).
  std::vector<S>& mutable_values() {
    if (node_->backward_fn) throw ShapeError("cannot mutate a non-leaf tensor");
    return node_->value;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty())
      throw ShapeError("tensor has no accumulated gradient");
    return node_->grad;
  }
  // In-place gradient rescale (gradient clipping); no-op without a gradient.
  void scale_grad(S factor) {
    for (auto& g : node_->grad) g *= factor;
  }
  void zero_grad() { node_->grad.clear(); }

  S item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor");
    return node_->value[0];
  }

  // Detached copy sharing nothing with the tape.
  Tensor detach() const { return from_data(node_->shape, node_->value, false); }

  // --- internal plumbing (used by op implementations) ---
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  const std::shared_ptr<Node>& node() const { return node_; }

  template <class... Parents>
  static Tensor make_op(const char* op, Shape shape, std::vector<S> value,
                        std::function<void(Node&)> backward_fn, const Parents&... parents) {
    detail::check_all_finite(op, value);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    const bool track = GradMode::enabled() && (... || parents.requires_grad());
    if (track) {
      n->requires_grad = true;
      (n->parents.push_back(parents.node()), ...);
      n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
  }

 private:
  static Tensor leaf(Shape shape, std::vector<S>, bool requires_grad, S fill) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), fill);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad && GradMode::enabled();
    return Tensor(std::move(n));
  }

  std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// Reverse pass

template <class S>
void backward(const Tensor<S>& loss) {
  using Node = detail::TensorNode<S>;
  if (loss.numel() != 1) throw ShapeError("backward() requires a scalar loss");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Post-order over parent edges; reversed it is a topological order in which
  // every consumer runs before its producers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  root->grad_buf()[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape operations

namespace detail {

template <class S>
inline void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class S>
inline void axpy(std::vector<S>& dst, std::span<const S> src, S scale = S(1)) {
  for (size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace detail

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<S> out(a.values());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] += b.values()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(
      "add", a.shape(), std::move(out),
      [an, bn](auto& self) {
        if (an->requires_grad) detail::axpy<S>(an->grad_buf(), self.grad);
        if (bn->requires_grad) detail::axpy<S>(bn->grad_buf(), self.grad);
      },
      a, b);
}

template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<S> out(a.values());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] -= b.values()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(
      "sub", a.shape(), std::move(out),
      [an, bn](auto& self) {
        if (an->requires_grad) detail::axpy<S>(an->grad_buf(), self.grad);
        if (bn->requires_grad) detail::axpy<S>(bn->grad_buf(), self.grad, S(-1));
      },
      a, b);
}

template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<S> out(a.values());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] *= b.values()[i];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_op(
      "mul", a.shape(), std::move(out),
      [an, bn](auto& self) {
        if (an->requires_grad) {
          auto& g = an->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
        }
      },
      a, b);
}

template <class S>
Tensor<S> operator*(const Tensor<S>& a, S c) {
  std::vector<S> out(a.values());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return Tensor<S>::make_op(
      "mul_scalar", a.shape(), std::move(out),
      [an, c](auto& self) {
        if (an->requires_grad) detail::axpy<S>(an->grad_buf(), self.grad, c);
      },
      a);
}

template <class S>
Tensor<S> operator*(S c, const Tensor<S>& a) {
  return a * c;
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, S c) {
  std::vector<S> out(a.values());
  for (auto& v : out) v += c;
  auto an = a.node();
  return Tensor<S>::make_op(
      "add_scalar", a.shape(), std::move(out),
      [an](auto& self) {
        if (an->requires_grad) detail::axpy<S>(an->grad_buf(), self.grad);
      },
      a);
}

template <class S>
Tensor<S> operator-(const Tensor<S>& a) {
  std::vector<S> out(a.values());
  for (auto& v : out) v = -v;
  auto an = a.node();
  return Tensor<S>::make_op(
      "negate", a.shape(), std::move(out),
      [an](auto& self) {
        if (an->requires_grad) detail::axpy<S>(an->grad_buf(), self.grad, S(-1));
      },
      a);
}

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  std::vector<S> out(a.values());
  for (auto& v : out) v = std::exp(v);
  auto an = a.node();
  return Tensor<S>::make_op(
      "exp", a.shape(), std::move(out),
      [an](auto& self) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
      },
      a);
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  std::vector<S> out(a.values());
  for (auto& v : out) v = S(1) / (S(1) + std::exp(-v));
  auto an = a.node();
  return Tensor<S>::make_op(
      "sigmoid", a.shape(), std::move(out),
      [an](auto& self) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buf();
        for (size_t i = 0; i < g.size(); ++i) {
          const S y = self.value[i];
          g[i] += self.grad[i] * y * (S(1) - y);
        }
      },
      a);
}

template <class S>
Tensor<S> leaky_relu(const Tensor<S>& a, S slope) {
  std::vector<S> out(a.values());
  for (auto& v : out) v = v >= S(0) ? v : slope * v;
  auto an = a.node();
  return Tensor<S>::make_op(
      "leaky_relu", a.shape(), std::move(out),
      [an, slope](auto& self) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buf();
        for (size_t i = 0; i < g.size(); ++i)
          g[i] += self.grad[i] * (an->value[i] >= S(0) ? S(1) : slope);
      },
      a);
}

template <class S>
Tensor<S> abs(const Tensor<S>& a) {
  std::vector<S> out(a.values());
  for (auto& v : out) v = std::abs(v);
  auto an = a.node();
  return Tensor<S>::make_op(
      "abs", a.shape(), std::move(out),
      [an](auto& self) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buf();
        for (size_t i = 0; i < g.size(); ++i) {
          const S x = an->value[i];
          // subgradient 0 at the kink
          g[i] += self.grad[i] * (x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)));
        }
      },
      a);
}

template <class S>
Tensor<S> square(const Tensor<S>& a) {
  std::vector<S> out(a.values());
  for (auto& v : out) v = v * v;
  auto an = a.node();
  return Tensor<S>::make_op(
      "square", a.shape(), std::move(out),
      [an](auto& self) {
        if (!an->requires_grad) return;
        auto& g = an->grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * S(2) * an->value[i];
      },
      a);
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  // f64 accumulator keeps large reductions honest in f32 graphs.
  double acc = 0;
  for (const S v : a.values()) acc += static_cast<double>(v);
  auto an = a.node();
  return Tensor<S>::make_op(
      "sum", Shape{1}, std::vector<S>{static_cast<S>(acc)},
      [an](auto& self) {
        if (an->requires_grad) {
          auto& g = an->grad_buf();
          const S gy = self.grad[0];
          for (auto& v : g) v += gy;
        }
      },
      a);
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
  double acc = 0;
  for (const S v : a.values()) acc += static_cast<double>(v);
  const S inv_n = static_cast<S>(1.0 / static_cast<double>(a.numel()));
  auto an = a.node();
  return Tensor<S>::make_op(
      "mean", Shape{1}, std::vector<S>{static_cast<S>(acc / static_cast<double>(a.numel()))},
      [an, inv_n](auto& self) {
        if (an->requires_grad) {
          auto& g = an->grad_buf();
          const S gy = self.grad[0] * inv_n;
          for (auto& v : g) v += gy;
        }
      },
      a);
}

// ---------------------------------------------------------------------------
// Channel concatenation / split for NCHW tensors

namespace detail {

template <class S>
inline void require_nchw(const char* op, const Tensor<S>& t) {
  if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor");
}

}  // namespace detail

template <class S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& p : parts) detail::require_nchw("concat_channels", p);
  const int64_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int64_t c_total = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
      throw ShapeError("concat_channels: inputs disagree on N/H/W");
    c_total += p.dim(1);
  }
  const int64_t plane = h * w;
  std::vector<S> out(static_cast<size_t>(n * c_total * plane));
  std::vector<int64_t> offsets(parts.size());
  {
    int64_t c_off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
      offsets[k] = c_off;
      const auto& src = parts[k].values();
      const int64_t ck = parts[k].dim(1);
      for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + (i * c_total + c_off) * plane, src.data() + i * ck * plane,
                    static_cast<size_t>(ck * plane) * sizeof(S));
      }
      c_off += ck;
    }
  }
  std::vector<std::shared_ptr<detail::TensorNode<S>>> pnodes;
  std::vector<int64_t> csizes;
  for (const auto& p : parts) {
    pnodes.push_back(p.node());
    csizes.push_back(p.dim(1));
  }
  auto backward_fn = [pnodes, offsets, csizes, n, c_total, plane](auto& self) {
    for (size_t k = 0; k < pnodes.size(); ++k) {
      if (!pnodes[k]->requires_grad) continue;
      auto& g = pnodes[k]->grad_buf();
      const int64_t ck = csizes[k];
      for (int64_t i = 0; i < n; ++i) {
        const S* src = self.grad.data() + (i * c_total + offsets[k]) * plane;
        S* dst = g.data() + i * ck * plane;
        for (int64_t j = 0; j < ck * plane; ++j) dst[j] += src[j];
      }
    }
  };
  detail::check_all_finite("concat_channels", out);
  auto node = std::make_shared<detail::TensorNode<S>>();
  node->shape = Shape{n, c_total, h, w};
  node->value = std::move(out);
  node->op = "concat_channels";
  bool track = false;
  if (GradMode::enabled())
    for (const auto& p : parts) track = track || p.requires_grad();
  if (track) {
    node->requires_grad = true;
    node->parents.assign(pnodes.begin(), pnodes.end());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<S>(std::move(node));
}

template <class S>
std::vector<Tensor<S>> split_channels(const Tensor<S>& t, const std::vector<int64_t>& sizes) {
  detail::require_nchw("split_channels", t);
  const int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  int64_t sum = 0;
  for (int64_t s : sizes) {
    if (s <= 0) throw ShapeError("split_channels: sizes must be positive");
    sum += s;
  }
  if (sum != c)
    throw ShapeError("split_channels: sizes sum to " + std::to_string(sum) + ", tensor has " +
                     std::to_string(c) + " channels");
  const int64_t plane = h * w;
  std::vector<Tensor<S>> outs;
  auto tn = t.node();
  int64_t c_off = 0;
  for (int64_t ck : sizes) {
    std::vector<S> part(static_cast<size_t>(n * ck * plane));
    for (int64_t i = 0; i < n; ++i) {
      std::memcpy(part.data() + i * ck * plane, t.values().data() + (i * c + c_off) * plane,
                  static_cast<size_t>(ck * plane) * sizeof(S));
    }
    const int64_t off = c_off;
    outs.push_back(Tensor<S>::make_op(
        "split_channels", Shape{n, ck, h, w}, std::move(part),
        [tn, off, ck, n, c, plane](auto& self) {
          if (!tn->requires_grad) return;
          auto& g = tn->grad_buf();
          for (int64_t i = 0; i < n; ++i) {
            const S* src = self.grad.data() + i * ck * plane;
            S* dst = g.data() + (i * c + off) * plane;
            for (int64_t j = 0; j < ck * plane; ++j) dst[j] += src[j];
          }
        },
        t));
    c_off += ck;
  }
  return outs;
}

// ---------------------------------------------------------------------------
// Per-channel KL divergence of a fitted diagonal Gaussian to N(0, I):
// mean over channels of 0.5*(mu^2 + var - ln var - 1), moments taken over
// batch and spatial positions. Variance is floored at kVarianceFloor.

inline constexpr double kVarianceFloor = 1e-6;

template <class S>
Tensor<S> kl_std_normal(const Tensor<S>& t) {
  detail::require_nchw("kl_std_normal", t);
  const int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const int64_t per_channel = n * h * w;
  if (per_channel < 2) throw ShapeError("kl_std_normal: fewer than 2 elements per channel");
  const int64_t plane = h * w;
  const auto& x = t.values();

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const S* p = x.data() + (i * c + ch) * plane;
      double acc = 0;
      for (int64_t j = 0; j < plane; ++j) acc += p[j];
      mean[ch] += acc;
    }
  for (int64_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(per_channel);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const S* p = x.data() + (i * c + ch) * plane;
      double acc = 0;
      for (int64_t j = 0; j < plane; ++j) {
        const double d = p[j] - mean[ch];
        acc += d * d;
      }
      var[ch] += acc;
    }
  double kl = 0;
  std::vector<bool> floored(c);
  for (int64_t ch = 0; ch < c; ++ch) {
    var[ch] /= static_cast<double>(per_channel);
    floored[ch] = var[ch] < kVarianceFloor;
    const double v = std::max(var[ch], kVarianceFloor);
    var[ch] = v;
    kl += 0.5 * (mean[ch] * mean[ch] + v - std::log(v) - 1.0);
  }
  kl /= static_cast<double>(c);

  auto tn = t.node();
  return Tensor<S>::make_op(
      "kl_std_normal", Shape{1}, std::vector<S>{static_cast<S>(kl)},
      [tn, mean, var, floored, n, c, plane, per_channel](auto& self) {
        if (!tn->requires_grad) return;
        auto& g = tn->grad_buf();
        const double gy = static_cast<double>(self.grad[0]) / static_cast<double>(c);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double dmu = mean[ch] / static_cast<double>(per_channel);
          const double dvar_coeff =
              floored[ch] ? 0.0 : 0.5 * (1.0 - 1.0 / var[ch]) * 2.0 / static_cast<double>(per_channel);
          for (int64_t i = 0; i < n; ++i) {
            const S* p = tn->value.data() + (i * c + ch) * plane;
            S* gp = g.data() + (i * c + ch) * plane;
            for (int64_t j = 0; j < plane; ++j)
              gp[j] += static_cast<S>(gy * (dmu + dvar_coeff * (p[j] - mean[ch])));
          }
        }
      },
      t);
}

}  // namespace hdiv

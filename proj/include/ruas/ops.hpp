#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/tensor.hpp"

// Differentiable primitives. Every function builds its value eagerly and,
// when any input requires gradients, records the adjoint rule on the result.

namespace ruas {

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

// `b` may broadcast into `a` along any axis where it has extent 1.
inline bool broadcastable(const Shape& a, const Shape& b) {
  auto da = a.dims();
  auto db = b.dims();
  for (int i = 0; i < 4; ++i) {
    if (db[i] != da[i] && db[i] != 1) return false;
  }
  return true;
}

inline std::vector<std::size_t> broadcast_map(const Shape& a, const Shape& b) {
  std::vector<std::size_t> idx(a.numel());
  std::size_t k = 0;
  for (std::size_t n = 0; n < a.n; ++n)
    for (std::size_t c = 0; c < a.c; ++c)
      for (std::size_t y = 0; y < a.h; ++y)
        for (std::size_t x = 0; x < a.w; ++x) {
          std::size_t bn = b.n == 1 ? 0 : n;
          std::size_t bc = b.c == 1 ? 0 : c;
          std::size_t by = b.h == 1 ? 0 : y;
          std::size_t bx = b.w == 1 ? 0 : x;
          idx[k++] = ((bn * b.c + bc) * b.h + by) * b.w + bx;
        }
  return idx;
}

enum class BinOp { add, sub, mul, div };

template <std::floating_point T>
Tensor<T> binary(BinOp op, const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (!broadcastable(sa, sb)) {
    throw ShapeError(std::string(name) + ": cannot broadcast " + to_string(sb) + " into " + to_string(sa));
  }
  const bool same = sa == sb;
  std::vector<std::size_t> map;
  if (!same) map = broadcast_map(sa, sb);
  auto bi = [&](std::size_t i) { return same ? i : map[i]; };

  const auto& av = a.values();
  const auto& bv = b.values();
  if (op == BinOp::div) {
    for (T d : bv) {
      if (std::abs(d) < T(1e-12)) throw DomainError("div: denominator magnitude below 1e-12");
    }
  }
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    const T y = bv[bi(i)];
    switch (op) {
      case BinOp::add: out[i] = x + y; break;
      case BinOp::sub: out[i] = x - y; break;
      case BinOp::mul: out[i] = x * y; break;
      case BinOp::div: out[i] = x / y; break;
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_result(sa, std::move(out), {a, b}, [op, an, bn, same, map](const Node<T>& o) {
    auto bi = [&](std::size_t i) { return same ? i : map[i]; };
    const auto& g = o.grad;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (op) {
          case BinOp::add:
          case BinOp::sub: ga[i] += g[i]; break;
          case BinOp::mul: ga[i] += g[i] * bn->value[bi(i)]; break;
          case BinOp::div: ga[i] += g[i] / bn->value[bi(i)]; break;
        }
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t j = bi(i);
        switch (op) {
          case BinOp::add: gb[j] += g[i]; break;
          case BinOp::sub: gb[j] -= g[i]; break;
          case BinOp::mul: gb[j] += g[i] * an->value[i]; break;
          case BinOp::div: {
            const T d = bn->value[j];
            gb[j] -= g[i] * an->value[i] / (d * d);
            break;
          }
        }
      }
    }
  });
}

// Elementwise map with derivative expressed through input and output values.
template <std::floating_point T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto an = a.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [an, df](const Node<T>& o) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * df(an->value[i], o.value[i]);
  });
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinOp::add, a, b, "add");
}
template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinOp::sub, a, b, "sub");
}
template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinOp::mul, a, b, "mul");
}
/// Throws DomainError when any denominator is within 1e-12 of zero; clamp
/// the denominator first.
template <std::floating_point T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinOp::div, a, b, "div");
}

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}
template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}
template <std::floating_point T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}
template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}
/// Gradient passes where lo <= x <= hi and is zero outside.
template <std::floating_point T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  return detail::unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}
/// Subgradient 0 at 0.
template <std::floating_point T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}
template <std::floating_point T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduce { sum, mean, l1, l2sq };

template <std::floating_point T>
Tensor<T> reduce(Reduce op, const Tensor<T>& a) {
  const auto& av = a.values();
  T acc = 0;
  for (T x : av) {
    switch (op) {
      case Reduce::sum:
      case Reduce::mean: acc += x; break;
      case Reduce::l1: acc += std::abs(x); break;
      case Reduce::l2sq: acc += x * x; break;
    }
  }
  const T n = static_cast<T>(av.size());
  if (op == Reduce::mean) acc /= n;
  auto an = a.node();
  return Tensor<T>::make_result(Shape{}, {acc}, {a}, [op, an, n](const detail::Node<T>& o) {
    const T g = o.grad[0];
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T x = an->value[i];
      switch (op) {
        case Reduce::sum: ga[i] += g; break;
        case Reduce::mean: ga[i] += g / n; break;
        case Reduce::l1: ga[i] += g * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0))); break;
        case Reduce::l2sq: ga[i] += g * T(2) * x; break;
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) { return reduce(Reduce::sum, a); }
template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& a) { return reduce(Reduce::mean, a); }
template <std::floating_point T>
Tensor<T> l1(const Tensor<T>& a) { return reduce(Reduce::l1, a); }
template <std::floating_point T>
Tensor<T> l2sq(const Tensor<T>& a) { return reduce(Reduce::l2sq, a); }

// ---------------------------------------------------------------------------
// Softmax over every element of the tensor (a logit vector).

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const auto& v = logits.values();
  if (v.empty()) throw ConfigError("softmax of an empty vector");
  const T m = *std::max_element(v.begin(), v.end());
  std::vector<T> out(v.size());
  T z = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    z += out[i];
  }
  for (T& x : out) x /= z;
  auto ln = logits.node();
  return Tensor<T>::make_result(logits.shape(), std::move(out), {logits}, [ln](const detail::Node<T>& o) {
    T dot = 0;
    for (std::size_t i = 0; i < o.grad.size(); ++i) dot += o.grad[i] * o.value[i];
    auto& g = ln->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.value[i] * (o.grad[i] - dot);
  });
}

/// sum_i weights[i] * xs[i]; all xs share one shape, weights has xs.size() entries.
template <std::floating_point T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& xs, const Tensor<T>& weights) {
  if (xs.empty()) throw ConfigError("weighted_sum of nothing");
  if (weights.numel() != xs.size()) throw ShapeError("weighted_sum: weight count mismatch");
  const Shape s = xs.front().shape();
  for (const auto& x : xs) detail::require_same(s, x.shape(), "weighted_sum");
  std::vector<T> out(s.numel(), T(0));
  const auto& wv = weights.values();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& xv = xs[k].values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[k] * xv[i];
  }
  std::vector<Tensor<T>> parents = xs;
  parents.push_back(weights);
  std::vector<typename Tensor<T>::NodePtr> xn;
  for (const auto& x : xs) xn.push_back(x.node());
  auto wn = weights.node();
  return Tensor<T>::make_result(s, std::move(out), std::move(parents), [xn, wn](const detail::Node<T>& o) {
    for (std::size_t k = 0; k < xn.size(); ++k) {
      if (xn[k]->requires_grad) {
        auto& gx = xn[k]->grad_buffer();
        const T wk = wn->value[k];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += wk * o.grad[i];
      }
      if (wn->requires_grad) {
        T acc = 0;
        const auto& xv = xn[k]->value;
        for (std::size_t i = 0; i < xv.size(); ++i) acc += o.grad[i] * xv[i];
        wn->grad_buffer()[k] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

/// Zero-padded "same" convolution, stride 1. `w` is (c_out, c_in, k, k);
/// `b`, when present, holds c_out entries.
template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& b,
                 std::size_t dilation = 1) {
  const Shape sx = x.shape();
  const Shape sw = w.shape();
  if (sw.h != sw.w) throw ConfigError("conv2d: kernel must be square");
  if (sw.h % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(sw.h));
  if (dilation == 0) throw ConfigError("conv2d: dilation must be positive");
  if (sw.c != sx.c) {
    throw ShapeError("conv2d: input has " + std::to_string(sx.c) + " channels, kernel expects " +
                     std::to_string(sw.c));
  }
  if (b && b->numel() != sw.n) throw ShapeError("conv2d: bias length must equal output channels");

  const std::size_t N = sx.n, Ci = sx.c, H = sx.h, W = sx.w, Co = sw.n, K = sw.h;
  const long pad = static_cast<long>(dilation * (K - 1) / 2);
  const Shape so{N, Co, H, W};
  std::vector<T> out(so.numel(), T(0));
  const auto& xv = x.values();
  const auto& wv = w.values();

  // Visits every (output row segment, input row segment, weight) triple.
  auto for_taps = [=](auto&& body) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      const long dy = static_cast<long>(ky * dilation) - pad;
      const long y0 = std::max<long>(0, -dy), y1 = std::min<long>(static_cast<long>(H), static_cast<long>(H) - dy);
      for (std::size_t kx = 0; kx < K; ++kx) {
        const long dx = static_cast<long>(kx * dilation) - pad;
        const long x0 = std::max<long>(0, -dx), x1 = std::min<long>(static_cast<long>(W), static_cast<long>(W) - dx);
        if (y0 >= y1 || x0 >= x1) continue;
        body(ky, kx, dy, dx, y0, y1, x0, x1);
      }
    }
  };

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      T* op = out.data() + (n * Co + co) * H * W;
      if (b) std::fill(op, op + H * W, b->values()[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* ip = xv.data() + (n * Ci + ci) * H * W;
        const T* wp = wv.data() + (co * Ci + ci) * K * K;
        for_taps([&](std::size_t ky, std::size_t kx, long dy, long dx, long y0, long y1, long x0, long x1) {
          const T wk = wp[ky * K + kx];
          if (wk == T(0)) return;
          for (long y = y0; y < y1; ++y) {
            T* orow = op + y * static_cast<long>(W);
            const T* irow = ip + (y + dy) * static_cast<long>(W) + dx;
            for (long xx = x0; xx < x1; ++xx) orow[xx] += wk * irow[xx];
          }
        });
      }
    }
  }

  std::vector<Tensor<T>> parents{x, w};
  if (b) parents.push_back(*b);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b ? b->node() : nullptr;
  return Tensor<T>::make_result(so, std::move(out), std::move(parents),
                                [=](const detail::Node<T>& o) {
    const auto& g = o.grad;
    const bool gx_on = xn->requires_grad;
    const bool gw_on = wn->requires_grad;
    T* gx = gx_on ? xn->grad_buffer().data() : nullptr;
    T* gw = gw_on ? wn->grad_buffer().data() : nullptr;
    const T* xv = xn->value.data();
    const T* wv = wn->value.data();
    if (bn && bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co) {
          const T* gp = g.data() + (n * Co + co) * H * W;
          T acc = 0;
          for (std::size_t i = 0; i < H * W; ++i) acc += gp[i];
          gb[co] += acc;
        }
    }
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t co = 0; co < Co; ++co) {
        const T* gp = g.data() + (n * Co + co) * H * W;
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const std::size_t in_off = (n * Ci + ci) * H * W;
          const std::size_t w_off = (co * Ci + ci) * K * K;
          for_taps([&](std::size_t ky, std::size_t kx, long dy, long dx, long y0, long y1, long x0, long x1) {
            const T wk = wv[w_off + ky * K + kx];
            T acc = 0;
            for (long y = y0; y < y1; ++y) {
              const T* grow = gp + y * static_cast<long>(W);
              const long irow = static_cast<long>(in_off) + (y + dy) * static_cast<long>(W) + dx;
              if (gw_on) {
                const T* ir = xv + irow;
                for (long xx = x0; xx < x1; ++xx) acc += grow[xx] * ir[xx];
              }
              if (gx_on && wk != T(0)) {
                T* gr = gx + irow;
                for (long xx = x0; xx < x1; ++xx) gr[xx] += wk * grow[xx];
              }
            }
            if (gw_on) gw[w_off + ky * K + kx] += acc;
          });
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial helpers

/// Per-channel sliding maximum over a window x window neighbourhood, same
/// size output; positions outside the image are ignored. The adjoint flows
/// to the first maximal element in scan order.
template <std::floating_point T>
Tensor<T> max_pool_same(const Tensor<T>& x, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ConfigError("max_pool_same: window must be odd");
  const Shape s = x.shape();
  if (s.numel() == 0) throw ShapeError("max_pool_same: empty image");
  const long r = static_cast<long>(window / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  const auto& xv = x.values();
  std::vector<T> out(s.numel());
  std::vector<std::size_t> arg(s.numel());
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const std::size_t base = p * s.plane();
    for (long y = 0; y < H; ++y) {
      for (long xx = 0; xx < W; ++xx) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t bi = 0;
        for (long yy = std::max(0L, y - r); yy <= std::min(H - 1, y + r); ++yy) {
          for (long xs = std::max(0L, xx - r); xs <= std::min(W - 1, xx + r); ++xs) {
            const std::size_t i = base + static_cast<std::size_t>(yy * W + xs);
            if (xv[i] > best) {
              best = xv[i];
              bi = i;
            }
          }
        }
        const std::size_t o = base + static_cast<std::size_t>(y * W + xx);
        out[o] = best;
        arg[o] = bi;
      }
    }
  }
  auto xn = x.node();
  return Tensor<T>::make_result(s, std::move(out), {x}, [xn, arg = std::move(arg)](const detail::Node<T>& o) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[arg[i]] += o.grad[i];
  });
}

/// Concatenate along the channel axis.
template <std::floating_point T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ConfigError("concat_channels of nothing");
  const Shape s0 = xs.front().shape();
  std::size_t C = 0;
  for (const auto& x : xs) {
    const Shape s = x.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) throw ShapeError("concat_channels: spatial/batch mismatch");
    C += s.c;
  }
  const Shape so{s0.n, C, s0.h, s0.w};
  std::vector<T> out(so.numel());
  const std::size_t P = s0.plane();
  std::vector<std::size_t> offsets;
  std::size_t c_off = 0;
  for (const auto& x : xs) {
    offsets.push_back(c_off);
    const std::size_t c = x.shape().c;
    for (std::size_t n = 0; n < s0.n; ++n) {
      std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(n * c * P), c * P,
                  out.begin() + static_cast<std::ptrdiff_t>((n * C + c_off) * P));
    }
    c_off += c;
  }
  std::vector<typename Tensor<T>::NodePtr> xn;
  for (const auto& x : xs) xn.push_back(x.node());
  return Tensor<T>::make_result(so, std::move(out), xs, [xn, offsets, C, P, N = s0.n](const detail::Node<T>& o) {
    for (std::size_t k = 0; k < xn.size(); ++k) {
      if (!xn[k]->requires_grad) continue;
      auto& g = xn[k]->grad_buffer();
      const std::size_t c = xn[k]->shape.c;
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = o.grad.data() + (n * C + offsets[k]) * P;
        T* dst = g.data() + n * c * P;
        for (std::size_t i = 0; i < c * P; ++i) dst[i] += src[i];
      }
    }
  });
}

namespace detail {

template <std::floating_point T>
std::vector<T> gaussian_kernel(T sigma) {
  const long r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<T> k(static_cast<std::size_t>(2 * r + 1));
  T z = 0;
  for (long i = -r; i <= r; ++i) {
    const T v = std::exp(-T(i * i) / (2 * sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    z += v;
  }
  for (T& v : k) v /= z;
  return k;
}

// Separable zero-padded filtering of every plane. Symmetric kernels make
// this operator self-adjoint.
template <std::floating_point T>
void separable_filter(const std::vector<T>& in, std::vector<T>& out, const Shape& s, const std::vector<T>& k) {
  const long r = static_cast<long>(k.size() / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  std::vector<T> tmp(static_cast<std::size_t>(H * W));
  out.assign(in.size(), T(0));
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = in.data() + p * s.plane();
    T* dst = out.data() + p * s.plane();
    std::fill(tmp.begin(), tmp.end(), T(0));
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        T acc = 0;
        for (long d = -r; d <= r; ++d) {
          const long xs = x + d;
          if (xs >= 0 && xs < W) acc += k[static_cast<std::size_t>(d + r)] * src[y * W + xs];
        }
        tmp[static_cast<std::size_t>(y * W + x)] = acc;
      }
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        T acc = 0;
        for (long d = -r; d <= r; ++d) {
          const long ys = y + d;
          if (ys >= 0 && ys < H) acc += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(ys * W + x)];
        }
        dst[y * W + x] = acc;
      }
  }
}

}  // namespace detail

/// Per-channel Gaussian smoothing, normalized kernel truncated at 3 sigma,
/// zero padding.
template <std::floating_point T>
Tensor<T> gaussian_blur(const Tensor<T>& x, T sigma) {
  if (!(sigma > T(0))) throw ConfigError("gaussian_blur: sigma must be positive");
  auto k = detail::gaussian_kernel(sigma);
  std::vector<T> out;
  detail::separable_filter(x.values(), out, x.shape(), k);
  auto xn = x.node();
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [xn, k](const detail::Node<T>& o) {
    std::vector<T> back;
    detail::separable_filter(o.grad, back, o.shape, k);
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
  });
}

enum class Axis { x, y };

/// Forward difference along one spatial axis; the last column (row) is zero.
template <std::floating_point T>
Tensor<T> forward_diff(const Tensor<T>& a, Axis axis) {
  const Shape s = a.shape();
  const std::size_t stride = axis == Axis::x ? 1 : s.w;
  const auto& av = a.values();
  std::vector<T> out(av.size(), T(0));
  auto valid = [s, axis](std::size_t i) {
    const std::size_t q = i % s.plane();
    return axis == Axis::x ? (q % s.w) + 1 < s.w : (q / s.w) + 1 < s.h;
  };
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (valid(i)) out[i] = av[i + stride] - av[i];
  }
  auto an = a.node();
  return Tensor<T>::make_result(s, std::move(out), {a}, [an, stride, valid](const detail::Node<T>& o) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (!valid(i)) continue;
      g[i + stride] += o.grad[i];
      g[i] -= o.grad[i];
    }
  });
}

}  // namespace ruas

#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <vector>

#include "test_util.hpp"

namespace ruas::testing {

inline std::vector<D> relu_v(std::vector<D> v) {
  for (auto& x : v) x = std::max(0.0, x);
  return v;
}

// Straight-line evaluation of one operator from raw buffers.
inline std::vector<D> op_oracle(OpKind k, const Tensor<D>& x, const OpWeights<D>& w) {
  const auto t = traits(k);
  if (t.skip) return values(x);
  auto out = relu_v(conv_oracle(x, w->weight, &*w->bias, t.dilation));
  if (t.residual)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.data()[i];
  return out;
}

inline Tensor<D> as_tensor(Shape s, std::vector<D> v) { return Tensor<D>(s, std::move(v)); }

// Chain n0 -> n1 -> n2 -> n3 -> (n4 via edge 3), distill edges 4..6 from n0..n2,
// fused as [d0, d1, d2, chain3] by a 1x1 convolution.
inline std::vector<D> cell_oracle(const Tensor<D>& x, const Cell<D>& cell, const ArchParams<D>* alpha) {
  const Shape s = x.shape();
  auto edge = [&](std::size_t e, const Tensor<D>& in) {
    const auto& E = cell.edges()[e];
    if (E.candidates.size() == 1) return op_oracle(E.candidates[0], in, E.weights[0]);
    const auto l = alpha->logits[e].data();
    double m = *std::max_element(l.begin(), l.end()), z = 0;
    std::vector<D> p(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) z += (p[i] = std::exp(l[i] - m));
    std::vector<D> acc(s.numel(), 0.0);
    for (std::size_t k = 0; k < E.candidates.size(); ++k) {
      const auto o = op_oracle(E.candidates[k], in, E.weights[k]);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[k] / z * o[i];
    }
    return acc;
  };
  std::vector<Tensor<D>> n{x};
  for (std::size_t e = 0; e < 3; ++e) n.push_back(as_tensor(s, edge(e, n.back())));
  const auto c3 = edge(3, n[3]);
  std::vector<std::vector<D>> parts{edge(4, n[0]), edge(5, n[1]), edge(6, n[2]), c3};
  std::vector<D> cat;
  for (std::size_t b = 0; b < s.n; ++b)
    for (const auto& p : parts) cat.insert(cat.end(), p.begin() + b * s.c * s.plane(), p.begin() + (b + 1) * s.c * s.plane());
  const auto& f = cell.fusion();
  return conv_oracle(as_tensor({s.n, 4 * s.c, s.h, s.w}, cat), f.weight, &*f.bias, 1);
}

// Windowed sums of Gaussian weights with a non-separable 2-D loop.
inline double rtv_oracle(const Tensor<D>& t, double sigma, double eps) {
  const Shape s = t.shape();
  const long r = static_cast<long>(std::ceil(3 * sigma));
  double z = 0;
  for (long i = -r; i <= r; ++i) z += std::exp(-double(i * i) / (2 * sigma * sigma));
  auto g = [&](long i) { return std::exp(-double(i * i) / (2 * sigma * sigma)) / z; };
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  double total = 0;
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    auto v = [&](long y, long x) { return t.data()[p * s.plane() + static_cast<std::size_t>(y * W + x)]; };
    auto dx = [&](long y, long x) { return x + 1 < W ? v(y, x + 1) - v(y, x) : 0.0; };
    auto dy = [&](long y, long x) { return y + 1 < H ? v(y + 1, x) - v(y, x) : 0.0; };
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double tvx = 0, tvy = 0, lx = 0, ly = 0;
        for (long i = -r; i <= r; ++i)
          for (long j = -r; j <= r; ++j) {
            const long yy = y + i, xx = x + j;
            if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
            const double w = g(i) * g(j);
            tvx += w * std::abs(dx(yy, xx));
            tvy += w * std::abs(dy(yy, xx));
            lx += w * dx(yy, xx);
            ly += w * dy(yy, xx);
          }
        total += tvx / (std::abs(lx) + eps) + tvy / (std::abs(ly) + eps);
      }
  }
  return total;
}

inline double psnr_oracle(const Tensor<D>& a, const Tensor<D>& b) {
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) se += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return 10 * std::log10(static_cast<double>(a.numel()) / se);
}

// Every window position evaluated directly with a 2-D weight table.
inline double ssim_oracle(const Tensor<D>& a, const Tensor<D>& b) {
  const Shape s = a.shape();
  double g[11], z = 0;
  for (int i = 0; i < 11; ++i) z += (g[i] = std::exp(-double((i - 5) * (i - 5)) / 4.5));
  const double C1 = 1e-4, C2 = 9e-4;
  double total = 0;
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0;
    std::size_t count = 0;
    for (std::size_t y = 0; y + 11 <= s.h; ++y)
      for (std::size_t x = 0; x + 11 <= s.w; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = g[i] * g[j] / (z * z);
            const double p = a.at(0, c, y + i, x + j), q = b.at(0, c, y + i, x + j);
            mx += w * p, my += w * q, sxx += w * p * p, syy += w * q * q, sxy += w * p * q;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cv = sxy - mx * my;
        acc += (2 * mx * my + C1) * (2 * cv + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(s.c);
}

// Dense matrix stored as a 1x1 convolution kernel (rows, cols, 1, 1).
struct Mat {
  std::size_t rows, cols;
  std::vector<D> v;
  D operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  Tensor<D> kernel() const { return Tensor<D>({rows, cols, 1, 1}, v); }
};

inline Mat rand_mat(std::size_t r, std::size_t c, Rng& rng) {
  std::uniform_real_distribution<D> U(-1, 1);
  Mat m{r, c, std::vector<D>(r * c)};
  for (auto& x : m.v) x = U(rng);
  return m;
}

inline std::vector<D> rand_vec(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<D> U(-1, 1);
  std::vector<D> v(n);
  for (auto& x : v) x = U(rng);
  return v;
}

inline std::vector<D> matvec(const Mat& m, const std::vector<D>& x) {
  std::vector<D> y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) y[i] += m(i, j) * x[j];
  return y;
}

inline std::vector<D> matTvec(const Mat& m, const std::vector<D>& x) {
  std::vector<D> y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) y[j] += m(i, j) * x[i];
  return y;
}

// L(w, a) = 0.5 |P w + Q a - c|^2, with w and a as channel vectors.
struct Quadratic {
  Mat P, Q;
  std::vector<D> c;
  Tensor<D> operator()(const Tensor<D>& w, const Tensor<D>& a) const {
    auto r = sub(add(conv2d<D>(w, P.kernel(), std::nullopt), conv2d<D>(a, Q.kernel(), std::nullopt)),
                 Tensor<D>({1, c.size(), 1, 1}, c));
    return scale(l2sq(r), 0.5);
  }
  std::vector<D> residual(const std::vector<D>& w, const std::vector<D>& a) const {
    auto r = matvec(P, w);
    const auto qa = matvec(Q, a);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += qa[i] - c[i];
    return r;
  }
};

inline Quadratic rand_quad(std::size_t k, std::size_t n, std::size_t m, Rng& rng) {
  return {rand_mat(k, n, rng), rand_mat(k, m, rng), rand_vec(k, rng)};
}

// Exact gradient over a of L_val(w - lr * grad_w L_tr(w, a), a).
inline std::vector<D> unrolled_oracle(const Quadratic& val, const Quadratic& tr, const std::vector<D>& w,
                               const std::vector<D>& a, double lr) {
  auto gw = matTvec(tr.P, tr.residual(w, a));
  std::vector<D> w1(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) w1[i] = w[i] - lr * gw[i];
  const auto r = val.residual(w1, a);
  auto ga = matTvec(val.Q, r);
  // d w1 / d a = -lr * P_tr^T Q_tr, so the chain term is -lr * Q_tr^T P_tr (P_val^T r).
  const auto corr = matTvec(tr.Q, matvec(tr.P, matTvec(val.P, r)));
  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= lr * corr[i];
  return ga;
}

}  // namespace ruas::testing

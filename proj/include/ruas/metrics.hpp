#pragma once

#include <cmath>
#include <concepts>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/tensor.hpp"

namespace ruas {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) on unit-range images; identical images give kPsnrCap.
template <std::floating_point T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("psnr: shape mismatch");
  double se = 0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(da.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Structural similarity, 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over valid window positions, then over channels
/// and batch entries.
template <std::floating_point T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("ssim: shape mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double C1 = 0.01 * 0.01;
  constexpr double C2 = 0.03 * 0.03;
  const Shape s = a.shape();
  if (s.h < kWin || s.w < kWin) throw ConfigError("ssim: image smaller than the 11x11 window");

  std::vector<double> g(kWin);
  double z = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    z += g[i];
  }
  for (double& v : g) v /= z;

  const std::size_t H = s.h, W = s.w;
  const std::size_t OH = H - kWin + 1, OW = W - kWin + 1;
  // Separable valid-mode filtering of the five moment images.
  auto filter = [&](const std::vector<double>& img) {
    std::vector<double> tmp(H * OW), out(OH * OW);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        double acc = 0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * img[y * W + x + k];
        tmp[y * OW + x] = acc;
      }
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        double acc = 0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * tmp[(y + k) * OW + x];
        out[y * OW + x] = acc;
      }
    return out;
  };

  double total = 0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    std::vector<double> x(H * W), y(H * W), xx(H * W), yy(H * W), xy(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
      x[i] = da[p * H * W + i];
      y[i] = db[p * H * W + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    auto mx = filter(x), my = filter(y), mxx = filter(xx), myy = filter(yy), mxy = filter(xy);
    double acc = 0;
    for (std::size_t i = 0; i < OH * OW; ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cxy = mxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    total += acc / static_cast<double>(OH * OW);
  }
  return total / static_cast<double>(s.n * s.c);
}

}  // namespace ruas

#pragma once

#include <concepts>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/ops.hpp"
#include "ruas/search_space.hpp"
#include "ruas/tensor.hpp"

namespace ruas {

enum class Variant {
  ruas_s,  // scene module only
  ruas,    // scene + noise removal, always on
  ruas_a,  // scene + estimation-gated noise removal
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::ruas_s: return "ruas_s";
    case Variant::ruas: return "ruas";
    case Variant::ruas_a: return "ruas_a";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "ruas_s") return Variant::ruas_s;
  if (s == "ruas") return Variant::ruas;
  if (s == "ruas_a") return Variant::ruas_a;
  return std::nullopt;
}

struct TaskConfig {
  double epsilon = 0.01;  // noise gate threshold on mean |theta|
  double mu = 0.05;       // TV weight of the task loss
  std::size_t width = 6;

  void validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("task: epsilon must be nonnegative");
    if (!(mu >= 0.0)) throw ConfigError("task: mu must be nonnegative");
    if (width == 0) throw ConfigError("task: width must be positive");
  }
};

/// The task module sees u in display range.
template <std::floating_point T>
Tensor<T> task_input(const Tensor<T>& u_k) {
  return clamp(u_k, T(0), T(1));
}

/// Five 3x3 convolutions, 3 -> 6 -> 6 -> 6 -> 6 -> 3, ReLU after each.
template <std::floating_point T>
struct NoiseEstimator {
  std::vector<ConvWeights<T>> layers;

  static NoiseEstimator make(Rng& rng) {
    NoiseEstimator e;
    const std::size_t widths[] = {3, 6, 6, 6, 6, 3};
    for (std::size_t i = 0; i < 5; ++i) e.layers.push_back(make_conv<T>(widths[i + 1], widths[i], 3, true, rng));
    return e;
  }

  Tensor<T> forward(const Tensor<T>& u) const {
    auto h = u;
    for (const auto& l : layers) h = relu(apply_conv(h, l));
    return h;
  }

  [[nodiscard]] ParamSet<T> parameters() const {
    ParamSet<T> ps;
    for (std::size_t i = 0; i < layers.size(); ++i) collect(ps, "tm.estimator.conv" + std::to_string(i), layers[i]);
    return ps;
  }
  [[nodiscard]] std::vector<ConvFootprint> convs() const {
    std::vector<ConvFootprint> out;
    for (const auto& l : layers) out.push_back(footprint(l));
    return out;
  }
};

template <std::floating_point T>
Tensor<T> noise_estimate(const Tensor<T>& u_k, const NoiseEstimator<T>& est) {
  return est.forward(u_k);
}

/// True when removal can be skipped: ||theta||_1 / numel <= epsilon.
template <std::floating_point T>
bool noise_gate(const Tensor<T>& theta, double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("noise_gate: epsilon must be nonnegative");
  const T level = l1(theta.detach()).item() / static_cast<T>(theta.numel());
  return level <= static_cast<T>(epsilon);
}

/// Noise removal: (u, theta) -> 1x1 projection -> searched cell -> 1x1
/// projection to 3 channels -> residual add onto u -> clamp to [0, 1].
template <std::floating_point T>
struct Denoiser {
  ConvWeights<T> in_proj;
  Cell<T> cell;
  ConvWeights<T> out_proj;
  std::optional<ArchParams<T>> alpha;  // present while searching

  Tensor<T> forward(const Tensor<T>& u_k, const Tensor<T>& theta) const {
    if (!(u_k.shape() == theta.shape())) throw ShapeError("denoise: u and theta shapes differ");
    auto h = apply_conv(concat_channels<T>({u_k, theta}), in_proj);
    h = cell.forward(h, alpha ? &*alpha : nullptr);
    auto correction = apply_conv(h, out_proj);
    return clamp(add(u_k, correction), T(0), T(1));
  }

  [[nodiscard]] ParamSet<T> parameters() const {
    ParamSet<T> ps;
    collect(ps, "tm.remove.in_proj", in_proj);
    append(ps, cell.parameters());
    collect(ps, "tm.remove.out_proj", out_proj);
    return ps;
  }
  [[nodiscard]] std::vector<ConvFootprint> convs() const {
    auto out = cell.convs();
    out.push_back(footprint(in_proj));
    out.push_back(footprint(out_proj));
    return out;
  }
};

template <std::floating_point T>
Tensor<T> denoise(const Tensor<T>& u_k, const Tensor<T>& theta, const Denoiser<T>& d) {
  return d.forward(u_k, theta);
}

template <std::floating_point T>
Denoiser<T> make_denoiser(const TaskConfig& cfg, Cell<T> cell, Rng& rng) {
  cfg.validate();
  if (cell.spec().width != cfg.width) throw ConfigError("denoiser: cell width must equal task width");
  Denoiser<T> d;
  d.in_proj = make_conv<T>(cfg.width, 6, 1, true, rng);
  d.cell = std::move(cell);
  d.out_proj = make_conv<T>(3, cfg.width, 1, true, rng);
  return d;
}

/// Anisotropic total variation.
template <std::floating_point T>
Tensor<T> total_variation(const Tensor<T>& x) {
  return add(l1(forward_diff(x, Axis::x)), l1(forward_diff(x, Axis::y)));
}

/// sum((x - u)^2 / (1 + theta)) + mu * TV(x). theta only weights the
/// fidelity and receives no gradient.
template <std::floating_point T>
Tensor<T> task_loss(const Tensor<T>& x, const Tensor<T>& u_k, const Tensor<T>& theta, double mu) {
  if (!(x.shape() == u_k.shape()) || !(x.shape() == theta.shape())) throw ShapeError("task_loss: shape mismatch");
  std::vector<T> w(theta.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = T(1) / (T(1) + theta.data()[i]);
  Tensor<T> weight(theta.shape(), std::move(w));
  auto fidelity = sum(mul(square(sub(x, u_k)), weight));
  if (mu == 0.0) return fidelity;
  return add(fidelity, scale(total_variation(x), static_cast<T>(mu)));
}

}  // namespace ruas

#pragma once

#include <concepts>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ruas/error.hpp"
#include "ruas/ops.hpp"
#include "ruas/search_space.hpp"
#include "ruas/tensor.hpp"

namespace ruas {

/// How each stage re-initializes the illumination before the learned update.
enum class WarmStart {
  fixed,       // always restart from the initial estimate t0
  no_rectify,  // local max of the current illumination
  rectify,     // local max minus gamma * (u - y)
};

inline std::string_view to_string(WarmStart w) {
  switch (w) {
    case WarmStart::fixed: return "fixed";
    case WarmStart::no_rectify: return "no_rectify";
    case WarmStart::rectify: return "rectify";
  }
  return "?";
}

inline std::optional<WarmStart> parse_warm_start(std::string_view s) {
  if (s == "fixed") return WarmStart::fixed;
  if (s == "no_rectify") return WarmStart::no_rectify;
  if (s == "rectify") return WarmStart::rectify;
  return std::nullopt;
}

struct SceneConfig {
  std::size_t stages = 3;  // K
  std::size_t window = 3;  // extent of the local-max neighbourhood
  double gamma = 0.1;      // rectification strength
  WarmStart warm_start = WarmStart::no_rectify;
  double t_floor = 1e-3;
  double eta = 1e-3;  // RTV weight in the scene loss
  double rtv_sigma = 1.5;
  double rtv_eps = 1e-3;
  std::size_t width = 3;

  void validate() const {
    if (stages < 1) throw ConfigError("scene: K must be at least 1");
    if (window == 0 || window % 2 == 0) throw ConfigError("scene: window must be odd");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("scene: gamma must lie in (0, 1]");
    if (!(t_floor > 0.0 && t_floor < 1.0)) throw ConfigError("scene: t_floor must lie in (0, 1)");
    if (!(eta >= 0.0)) throw ConfigError("scene: eta must be nonnegative");
    if (!(rtv_sigma > 0.0)) throw ConfigError("scene: rtv_sigma must be positive");
    if (!(rtv_eps > 0.0)) throw ConfigError("scene: rtv_eps must be positive");
    if (width != 3) throw ConfigError("scene: cell width must equal the 3 image channels");
  }
};

/// t0: per-channel local max of the observation, clamped to [t_floor, 1].
template <std::floating_point T>
Tensor<T> init_illumination(const Tensor<T>& y, const SceneConfig& cfg) {
  if (y.numel() == 0) throw ShapeError("init_illumination: empty image");
  return clamp(max_pool_same(y, cfg.window), static_cast<T>(cfg.t_floor), T(1));
}

template <std::floating_point T>
Tensor<T> warm_start(const Tensor<T>& t_k, const Tensor<T>& u_k, const Tensor<T>& y, const Tensor<T>& t0,
                     const SceneConfig& cfg) {
  switch (cfg.warm_start) {
    case WarmStart::fixed: return t0;
    case WarmStart::no_rectify: return max_pool_same(t_k, cfg.window);
    case WarmStart::rectify: {
      auto r = sub(u_k, y);
      return clamp(sub(max_pool_same(t_k, cfg.window), scale(r, static_cast<T>(cfg.gamma))),
                   static_cast<T>(cfg.t_floor), T(1));
    }
  }
  throw ConfigError("warm_start: unknown mode");
}

template <std::floating_point T>
struct StageState {
  Tensor<T> t;
  Tensor<T> u;
};

/// One unrolled step: t_out = clamp(t_hat - cell(t_hat)), u_out = y / t_out.
template <std::floating_point T>
StageState<T> stage(const StageState<T>& in, const Tensor<T>& y, const Tensor<T>& t0, const Cell<T>& cell,
                    const ArchParams<T>* alpha, const SceneConfig& cfg) {
  auto t_hat = warm_start(in.t, in.u, y, t0, cfg);
  auto t_out = clamp(sub(t_hat, cell.forward(t_hat, alpha)), static_cast<T>(cfg.t_floor), T(1));
  auto u_out = div(y, t_out);
  return {t_out, u_out};
}

template <std::floating_point T>
struct SceneResult {
  Tensor<T> u;   // u_K
  Tensor<T> t;   // t_K
  Tensor<T> t0;  // initial illumination
  std::vector<StageState<T>> trajectory;  // stages 1..K
};

template <std::floating_point T>
SceneResult<T> scene_forward(const Tensor<T>& y, const Cell<T>& cell, const ArchParams<T>* alpha,
                             const SceneConfig& cfg) {
  cfg.validate();
  if (y.shape().c != cfg.width) throw ShapeError("scene_forward: expected a 3-channel image");
  auto t0 = init_illumination(y, cfg);
  StageState<T> state{t0, div(y, t0)};
  SceneResult<T> res{state.u, state.t, t0, {}};
  for (std::size_t k = 0; k < cfg.stages; ++k) {
    state = stage(state, y, t0, cell, alpha, cfg);
    res.trajectory.push_back(state);
  }
  res.u = state.u;
  res.t = state.t;
  return res;
}

/// Relative total variation: per pixel and axis, the Gaussian-windowed
/// sum of |gradient| over the magnitude of the windowed signed gradient.
template <std::floating_point T>
Tensor<T> rtv(const Tensor<T>& t, T sigma, T eps) {
  if (!(sigma > T(0))) throw ConfigError("rtv: sigma must be positive");
  auto term = [&](Axis axis) {
    auto d = forward_diff(t, axis);
    auto windowed_tv = gaussian_blur(abs(d), sigma);
    auto inherent = abs(gaussian_blur(d, sigma));
    return sum(div(windowed_tv, add_scalar(inherent, eps)));
  };
  return add(term(Axis::x), term(Axis::y));
}

/// ||t_K - y||^2 + eta * RTV(t_K)
template <std::floating_point T>
Tensor<T> scene_loss(const Tensor<T>& t_k, const Tensor<T>& y, const SceneConfig& cfg) {
  auto fidelity = l2sq(sub(t_k, y));
  if (cfg.eta == 0.0) return fidelity;
  return add(fidelity,
             scale(rtv(t_k, static_cast<T>(cfg.rtv_sigma), static_cast<T>(cfg.rtv_eps)), static_cast<T>(cfg.eta)));
}

/// Scene module: one cell shared by all K stages.
template <std::floating_point T>
struct SceneModule {
  SceneConfig cfg;
  Cell<T> cell;
  std::optional<ArchParams<T>> alpha;  // present while searching

  SceneResult<T> forward(const Tensor<T>& y) const {
    return scene_forward(y, cell, alpha ? &*alpha : nullptr, cfg);
  }
  [[nodiscard]] ParamSet<T> parameters() const { return cell.parameters(); }
  [[nodiscard]] Cost cost(std::size_t h, std::size_t w) const { return count_cost(cell.convs(), h, w, cfg.stages); }
};

template <std::floating_point T>
SceneModule<T> make_scene_module(const SceneConfig& cfg, const std::vector<OpKind>& choice, Rng& rng) {
  cfg.validate();
  return {cfg, Cell<T>::discrete(CellSpec::distillation(cfg.width), choice, "sm.cell", rng), std::nullopt};
}

template <std::floating_point T>
SceneModule<T> make_scene_supernet(const SceneConfig& cfg, const std::vector<OpKind>& candidates, Rng& rng) {
  cfg.validate();
  auto spec = CellSpec::distillation(cfg.width);
  auto cell = Cell<T>::supernet(spec, candidates, "sm.cell", rng);
  auto alpha = ArchParams<T>::init(TaskKind::scene, candidates, spec.edges.size(), "alpha_s", rng);
  return {cfg, std::move(cell), std::move(alpha)};
}

}  // namespace ruas

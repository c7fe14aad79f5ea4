#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ruas/ops.hpp"
#include "ruas/optim.hpp"
#include "ruas/scene.hpp"
#include "ruas/search_space.hpp"
#include "ruas/task.hpp"

namespace ruas {

struct GradCheckResult {
  std::string name;
  double error = 0;  // max relative deviation from central differences
};

inline constexpr double kGradTolerance = 1e-3;

namespace detail {

// Values drawn away from zero so that |x|, relu and friends stay smooth
// within the finite-difference step.
inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo, double hi, bool avoid_zero, bool trainable = true) {
  std::uniform_real_distribution<double> U(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) {
    do x = U(rng);
    while (avoid_zero && std::abs(x) < 0.05);
  }
  return Tensor<double>(s, std::move(v), trainable);
}

// Contracts a tensor with fixed random weights so every output entry
// matters to the scalar.
inline Tensor<double> project(const Tensor<double>& y, Rng& rng) {
  auto r = random_tensor(y.shape(), rng, -1.0, 1.0, false, false);
  return sum(mul(y, r));
}

}  // namespace detail

/// Finite-difference checks of every differentiable primitive plus the
/// composite scene forward pass and scene loss.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  using detail::project;
  using detail::random_tensor;
  using T = double;
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  const double h = 1e-6;
  auto check = [&](const std::string& name, const std::function<Tensor<T>()>& f, const Tensor<T>& x) {
    out.push_back({name, static_cast<double>(grad_check<T>(f, x, h))});
  };

  const Shape s{1, 2, 5, 6};
  auto a = random_tensor(s, rng, -1, 1, true);
  auto b = random_tensor(s, rng, -1, 1, true);
  auto pos = random_tensor(s, rng, 0.5, 1.5, false);
  auto col = random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5, false);

  auto ra = random_tensor(s, rng, -1, 1, false, false);
  auto lin = [&](const Tensor<T>& y) { return sum(mul(y, ra)); };
  check("add", [&] { return lin(add(a, b)); }, a);
  check("sub", [&] { return lin(sub(a, b)); }, b);
  check("mul", [&] { return lin(mul(a, b)); }, a);
  check("div.numerator", [&] { return lin(div(a, pos)); }, a);
  check("div.denominator", [&] { return lin(div(a, pos)); }, pos);
  check("div.broadcast", [&] { return lin(div(a, col)); }, col);
  check("add_scalar", [&] { return lin(add_scalar(a, 0.3)); }, a);
  check("scale", [&] { return lin(scale(a, -1.7)); }, a);
  check("neg", [&] { return lin(neg(a)); }, a);
  check("relu", [&] { return lin(relu(a)); }, a);
  check("clamp", [&] { return lin(clamp(a, -0.5, 0.5)); }, a);
  check("abs", [&] { return lin(abs(a)); }, a);
  check("square", [&] { return lin(square(a)); }, a);
  check("sum", [&] { return sum(a); }, a);
  check("mean", [&] { return mean(a); }, a);
  check("l1", [&] { return l1(a); }, a);
  check("l2sq", [&] { return l2sq(a); }, a);

  auto logits = random_tensor({1, 1, 1, 5}, rng, -2, 2, false);
  auto rl = random_tensor({1, 1, 1, 5}, rng, -1, 1, false, false);
  check("softmax", [&] { return sum(mul(softmax(logits), rl)); }, logits);
  auto wts = random_tensor({1, 1, 1, 2}, rng, -1, 1, false);
  check("weighted_sum.inputs", [&] { return lin(weighted_sum<T>({a, b}, wts)); }, a);
  check("weighted_sum.weights", [&] { return lin(weighted_sum<T>({a, b}, wts)); }, wts);

  auto x = random_tensor({1, 2, 6, 7}, rng, -1, 1, false);
  auto w3 = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
  auto bias = random_tensor({1, 3, 1, 1}, rng, -1, 1, false);
  std::optional<Tensor<T>> ob = bias;
  auto rc = random_tensor({1, 3, 6, 7}, rng, -1, 1, false, false);
  auto conv_loss = [&](std::size_t dil) { return sum(mul(conv2d(x, w3, ob, dil), rc)); };
  check("conv2d.input", [&] { return conv_loss(1); }, x);
  check("conv2d.weight", [&] { return conv_loss(1); }, w3);
  check("conv2d.bias", [&] { return conv_loss(1); }, bias);
  check("conv2d.dilated.input", [&] { return conv_loss(2); }, x);
  check("conv2d.dilated.weight", [&] { return conv_loss(2); }, w3);

  auto rx = random_tensor(x.shape(), rng, -1, 1, false, false);
  check("max_pool_same", [&] { return sum(mul(max_pool_same(x, 3), rx)); }, x);
  check("gaussian_blur", [&] { return sum(mul(gaussian_blur(x, 1.2), rx)); }, x);
  check("forward_diff.x", [&] { return sum(mul(forward_diff(x, Axis::x), rx)); }, x);
  check("forward_diff.y", [&] { return sum(mul(forward_diff(x, Axis::y), rx)); }, x);
  auto x2 = random_tensor({1, 1, 6, 7}, rng, -1, 1, false);
  auto rcat = random_tensor({1, 3, 6, 7}, rng, -1, 1, false, false);
  check("concat_channels", [&] { return sum(mul(concat_channels<T>({x, x2}), rcat)); }, x2);

  // Mixed operation with respect to its logits.
  {
    const auto cands = op_registry(TaskKind::scene);
    std::vector<OpWeights<T>> ws;
    for (auto k : cands) ws.push_back(make_op_weights<T>(k, 3, rng));
    auto edge = random_tensor({1, 1, 1, cands.size()}, rng, -1, 1, false);
    auto in = random_tensor({1, 3, 6, 6}, rng, 0, 1, false, false);
    auto r = random_tensor({1, 3, 6, 6}, rng, -1, 1, false, false);
    check("mixed_forward.logits", [&] { return sum(mul(mixed_forward(in, edge, cands, ws), r)); }, edge);
  }

  // RTV and the task loss.
  {
    auto t = random_tensor({1, 3, 8, 8}, rng, 0.1, 0.9, false);
    check("rtv", [&] { return rtv(t, 1.5, 1e-3); }, t);
    auto u = random_tensor({1, 3, 8, 8}, rng, 0.1, 0.9, false, false);
    auto theta = random_tensor({1, 3, 8, 8}, rng, 0.0, 0.2, false, false);
    check("task_loss", [&] { return task_loss(t, u, theta, 0.05); }, t);
  }

  // Full scene module at K = 3 followed by the scene loss.
  {
    SceneConfig cfg;
    cfg.stages = 3;
    auto y = random_tensor({1, 3, 8, 8}, rng, 0.05, 0.6, false);
    const auto cands = op_registry(TaskKind::scene);
    for (auto ws : {WarmStart::fixed, WarmStart::no_rectify, WarmStart::rectify}) {
      cfg.warm_start = ws;
      auto mod = make_scene_module<T>(cfg, std::vector<OpKind>(7, OpKind::c3), rng);
      auto params = mod.parameters();
      auto loss = [&] { return scene_loss(mod.forward(y).t, y, cfg); };
      const std::string tag = "scene_forward+scene_loss." + std::string(to_string(ws));
      check(tag + ".input", loss, y);
      check(tag + ".cell_weight", loss, params.front().tensor);
      check(tag + ".fusion_weight", loss, params.back().tensor);
    }
    cfg.warm_start = WarmStart::no_rectify;
    auto sup = make_scene_supernet<T>(cfg, cands, rng);
    check("scene_supernet.alpha", [&] { return scene_loss(sup.forward(y).t, y, cfg); }, sup.alpha->logits.front());
  }
  return out;
}

}  // namespace ruas

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace ruas;
using namespace ruas::testing;

namespace {

const std::vector<OpKind> kLow = op_registry(TaskKind::scene);

SceneModule<D> random_module(const SceneConfig& cfg, Rng& rng) {
  std::vector<OpKind> choice;
  for (int e = 0; e < 7; ++e) choice.push_back(kLow[rng() % kLow.size()]);
  auto m = make_scene_module<D>(cfg, choice, rng);
  for (auto& p : m.parameters())
    for (auto& v : p.tensor.mutable_data()) v = std::uniform_real_distribution<D>(-0.4, 0.4)(rng);
  return m;
}

void zero_ops(SceneModule<D>& m) {
  for (auto& p : m.parameters())
    if (p.name.find("fusion.bias") != std::string::npos || p.name.find("fusion") == std::string::npos)
      for (auto& v : p.tensor.mutable_data()) v = 0;
}

}  // namespace

TEST(InitIllumination, ConstantStaysConstant) {
  SceneConfig cfg;
  auto t = init_illumination(Tensor<D>::full({1, 3, 5, 5}, 0.4), cfg);
  for (D v : t.data()) EXPECT_DOUBLE_EQ(v, 0.4);
}

TEST(InitIllumination, ImpulseDilatesAndFloors) {
  SceneConfig cfg;
  auto y = Tensor<D>::zeros({1, 1, 7, 7});
  y.mutable_data()[3 * 7 + 3] = 1.0;
  auto t = init_illumination(y, cfg);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) {
      const bool in = r >= 2 && r <= 4 && c >= 2 && c <= 4;
      EXPECT_EQ(t.at(0, 0, r, c), in ? 1.0 : cfg.t_floor);
    }
}

TEST(InitIllumination, MatchesSlidingMaxOracle) {
  SceneConfig cfg;
  cfg.window = 5;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto y = rand_tensor({1, 3, 9, 8}, rng, 0, 1);
    auto want = maxpool_oracle(y, 5);
    for (auto& v : want) v = std::clamp(v, cfg.t_floor, 1.0);
    EXPECT_EQ(values(init_illumination(y, cfg)), want);
  }
}

TEST(WarmStart, RectifyWithZeroResidualEqualsNoRectify) {
  Rng rng(1);
  auto t = rand_tensor({1, 3, 6, 6}, rng, 0.1, 1);
  auto y = rand_tensor({1, 3, 6, 6}, rng, 0, 1);
  SceneConfig a, b;
  a.warm_start = WarmStart::rectify;
  b.warm_start = WarmStart::no_rectify;
  EXPECT_EQ(values(warm_start(t, y, y, t, a)), values(warm_start(t, y, y, t, b)));
}

TEST(WarmStart, HandComputedRectification) {
  SceneConfig cfg;
  cfg.warm_start = WarmStart::rectify;
  cfg.gamma = 1.0;
  auto t = Tensor<D>::full({1, 3, 4, 4}, 0.9);
  auto y = Tensor<D>::full({1, 3, 4, 4}, 0.3);
  auto u = Tensor<D>::full({1, 3, 4, 4}, 0.5);
  for (D v : values(warm_start(t, u, y, t, cfg))) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(WarmStart, FixedReturnsInitialEstimate) {
  Rng rng(2);
  auto t = rand_tensor({1, 3, 4, 4}, rng, 0.1, 1);
  auto t0 = rand_tensor({1, 3, 4, 4}, rng, 0.1, 1);
  SceneConfig cfg;
  cfg.warm_start = WarmStart::fixed;
  EXPECT_TRUE(warm_start(t, t, t, t0, cfg).same_node(t0));
}

TEST(WarmStart, MatchesDirectFormula) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto t = rand_tensor({1, 3, 6, 7}, rng, 0.01, 1);
    auto y = rand_tensor({1, 3, 6, 7}, rng, 0, 0.5);
    auto u = rand_tensor({1, 3, 6, 7}, rng, 0, 1);
    SceneConfig cfg;
    cfg.warm_start = WarmStart::rectify;
    cfg.gamma = 0.5;
    const auto mp = maxpool_oracle(t, cfg.window);
    const auto got = values(warm_start(t, u, y, t, cfg));
    for (std::size_t i = 0; i < mp.size(); ++i) {
      const double want = std::clamp(mp[i] - 0.5 * (u.data()[i] - y.data()[i]), cfg.t_floor, 1.0);
      EXPECT_EQ(got[i], want);
    }
  }
}

TEST(WarmStart, RectifyNeverExceedsNoRectifyOnNonnegativeResidual) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    auto t = rand_tensor({1, 3, 8, 8}, rng, 0.01, 1);
    auto y = rand_tensor({1, 3, 8, 8}, rng, 0, 1);
    auto u = rand_tensor({1, 3, 8, 8}, rng, 0, 1);
    SceneConfig r, n;
    r.warm_start = WarmStart::rectify;
    n.warm_start = WarmStart::no_rectify;
    r.gamma = std::uniform_real_distribution<D>(0.01, 1.0)(rng);
    const auto a = values(warm_start(t, u, y, t, r));
    const auto b = values(warm_start(t, u, y, t, n));
    for (std::size_t i = 0; i < a.size(); ++i)
      if (u.data()[i] - y.data()[i] >= 0) EXPECT_LE(a[i], b[i]);
  }
}

TEST(Stage, ZeroPriorWithFixedStartKeepsInitialEstimate) {
  Rng rng(3);
  SceneConfig cfg;
  cfg.warm_start = WarmStart::fixed;
  auto m = make_scene_module<D>(cfg, std::vector<OpKind>(7, OpKind::c3), rng);
  zero_ops(m);
  auto y = rand_tensor({1, 3, 6, 6}, rng, 0.05, 1);
  auto res = m.forward(y);
  EXPECT_EQ(values(res.t), values(res.t0));
  EXPECT_EQ(values(res.u), values(div(y, res.t0)));
}

TEST(Stage, UnitIlluminationLeavesImage) {
  Rng rng(4);
  SceneConfig cfg;
  auto m = make_scene_module<D>(cfg, std::vector<OpKind>(7, OpKind::c3), rng);
  zero_ops(m);
  auto y = Tensor<D>::full({1, 3, 4, 4}, 1.0);
  EXPECT_EQ(values(m.forward(y).trajectory.front().u), values(y));
}

TEST(Stage, SingleStageMatchesHandUnroll) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    SceneConfig cfg;
    cfg.stages = 1;
    cfg.warm_start = WarmStart::no_rectify;
    auto m = random_module(cfg, rng);
    auto y = rand_tensor({1, 3, 6, 6}, rng, 0.05, 0.8);
    auto t0 = maxpool_oracle(y, 3);
    for (auto& v : t0) v = std::clamp(v, cfg.t_floor, 1.0);
    auto that = Tensor<D>(y.shape(), maxpool_oracle(Tensor<D>(y.shape(), t0), 3));
    const auto g = values(m.cell.forward(that));
    auto res = m.forward(y);
    ASSERT_EQ(res.trajectory.size(), 1u);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = std::clamp(that.data()[i] - g[i], cfg.t_floor, 1.0);
      EXPECT_NEAR(res.t.data()[i], t, 1e-9);
      EXPECT_NEAR(res.u.data()[i], y.data()[i] / t, 1e-9);
    }
  }
}

TEST(SceneForward, RetinexInvariantsOnRandomImages) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    SceneConfig cfg;
    cfg.warm_start = static_cast<WarmStart>(seed % 3);
    auto m = random_module(cfg, rng);
    auto y = rand_tensor({1, 3, 8, 8}, rng, 0, 1);
    auto res = m.forward(y);
    ASSERT_EQ(res.trajectory.size(), 3u);
    for (const auto& st : res.trajectory) {
      for (std::size_t i = 0; i < y.numel(); ++i) {
        const double t = st.t.data()[i], u = st.u.data()[i];
        EXPECT_GE(t, cfg.t_floor);
        EXPECT_LE(t, 1.0);
        EXPECT_GE(u, y.data()[i]);
        if (t > cfg.t_floor && t < 1.0) EXPECT_NEAR(u * t, y.data()[i], 1e-6);
      }
    }
  }
}

TEST(SceneForward, SingleStageEqualsOneStageCall) {
  Rng rng(5);
  SceneConfig cfg;
  cfg.stages = 1;
  auto m = random_module(cfg, rng);
  auto y = rand_tensor({1, 3, 5, 5}, rng, 0.05, 1);
  auto t0 = init_illumination(y, cfg);
  auto st = stage<D>({t0, div(y, t0)}, y, t0, m.cell, nullptr, cfg);
  EXPECT_EQ(values(m.forward(y).t), values(st.t));
}

TEST(SceneForward, GradientsPassCheckAtThreeStages) {
  Rng rng(6);
  SceneConfig cfg;
  auto m = make_scene_module<D>(cfg, std::vector<OpKind>(7, OpKind::c3), rng);
  auto y = rand_tensor({1, 3, 8, 8}, rng, 0.05, 0.6, true);
  auto f = [&] { return scene_loss(m.forward(y).t, y, cfg); };
  EXPECT_LT(grad_check<D>(f, y, 1e-6), 1e-3);
  for (auto& p : m.parameters()) EXPECT_LT(grad_check<D>(f, p.tensor, 1e-6), 1e-3) << p.name;
}

TEST(SceneForward, RejectsWrongChannelCount) {
  Rng rng(7);
  SceneConfig cfg;
  auto m = make_scene_module<D>(cfg, std::vector<OpKind>(7, OpKind::sc), rng);
  EXPECT_THROW(m.forward(Tensor<D>::full({1, 1, 4, 4}, 0.5)), ShapeError);
}

TEST(Rtv, ConstantIsZero) {
  EXPECT_EQ(rtv(Tensor<D>::full({1, 3, 9, 9}, 0.3), 1.5, 1e-3).item(), 0.0);
}

TEST(Rtv, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto t = rand_tensor({1, 3, 9, 10}, rng, 0, 1);
    const double want = rtv_oracle(t, 1.5, 1e-3);
    const double got = rtv(t, 1.5, 1e-3).item();
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, want, 1e-6 * std::abs(want)) << "seed " << seed;
  }
}

TEST(Rtv, StepEdgeBeatsNoiseOfEqualGradientEnergy) {
  const std::size_t H = 16, W = 16;
  auto step = Tensor<D>::zeros({1, 1, H, W});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = W / 2; c < W; ++c) step.mutable_data()[r * W + c] = 1.0;
  auto tv = [&](const Tensor<D>& t) {
    return l1(forward_diff(t, Axis::x)).item() + l1(forward_diff(t, Axis::y)).item();
  };
  Rng rng(8);
  auto noise = rand_tensor({1, 1, H, W}, rng, 0, 1);
  auto scaled = scale(noise, tv(step) / tv(noise));
  ASSERT_NEAR(tv(scaled), tv(step), 1e-9);
  EXPECT_LT(rtv(step, 1.5, 1e-3).item(), rtv(scaled, 1.5, 1e-3).item());
}

TEST(Rtv, RejectsNonPositiveSigma) {
  EXPECT_THROW(rtv(Tensor<D>::zeros({1, 1, 3, 3}), 0.0, 1e-3), ConfigError);
}

TEST(SceneLoss, ZeroWhenIlluminationMatches) {
  Rng rng(9);
  SceneConfig cfg;
  cfg.eta = 0;
  auto y = rand_tensor({1, 3, 4, 4}, rng, 0, 1);
  EXPECT_EQ(scene_loss(y, y, cfg).item(), 0.0);
  auto t = rand_tensor({1, 3, 4, 4}, rng, 0, 1);
  EXPECT_DOUBLE_EQ(scene_loss(t, y, cfg).item(), l2sq(sub(t, y)).item());
}

TEST(SceneLoss, SumOfIndependentTerms) {
  Rng rng(10);
  SceneConfig cfg;
  cfg.eta = 1.0;
  auto y = rand_tensor({1, 3, 8, 8}, rng, 0, 1);
  auto t = rand_tensor({1, 3, 8, 8}, rng, 0, 1);
  double fid = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) fid += std::pow(t.data()[i] - y.data()[i], 2);
  EXPECT_NEAR(scene_loss(t, y, cfg).item(), fid + rtv_oracle(t, cfg.rtv_sigma, cfg.rtv_eps), 1e-6 * fid);
}

TEST(SceneConfig, ValidationRejectsOutOfRange) {
  auto bad = [](auto mutate) {
    SceneConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](SceneConfig& c) { c.stages = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SceneConfig& c) { c.window = 4; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SceneConfig& c) { c.gamma = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SceneConfig& c) { c.gamma = 1.5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SceneConfig& c) { c.t_floor = 1; }).validate(), ConfigError);
  EXPECT_NO_THROW(SceneConfig{}.validate());
}

TEST(SceneModule, CostCountsEveryStage) {
  Rng rng(11);
  SceneConfig cfg;
  auto m = make_scene_module<D>(cfg, std::vector<OpKind>(7, OpKind::c3), rng);
  const auto c = m.cost(8, 8);
  EXPECT_EQ(c.params, 7 * 84 + 39u);
  EXPECT_DOUBLE_EQ(c.mult_adds, 3.0 * 64 * (7 * 81 + 36));
}

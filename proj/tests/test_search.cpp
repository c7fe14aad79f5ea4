#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace ruas;
using namespace ruas::testing;

namespace {

SplitDataset<D> small_split(std::size_t count = 8, std::size_t side = 16) {
  return split_alternate(make_synthetic_set<D>(count, side, side, 7, {}));
}

RuasModel<D> supernet(Rng& rng, const std::vector<OpKind>& cands = op_registry(TaskKind::scene)) {
  return make_supernet<D>(SceneConfig{}, TaskConfig{}, cands, cands, rng);
}

}  // namespace

TEST(Hypergrad, MatchesUnrolledQuadraticOracle) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + seed % 4, m = 1 + seed % 3;
    const auto val = rand_quad(5, n, m, rng), tr = rand_quad(6, n, m, rng);
    const auto w0 = rand_vec(n, rng), a0 = rand_vec(m, rng);
    const double lr = 0.05 + 0.1 * static_cast<double>(seed % 5);
    auto w = Tensor<D>({1, n, 1, 1}, w0, true);
    auto a = Tensor<D>({1, m, 1, 1}, a0, true);
    ParamSet<D> A{{"a", a}}, W{{"w", w}};
    const auto got = hypergrad_onestep<D>(A, W, [&] { return val(w, a); }, [&] { return tr(w, a); }, lr, 1e-2);
    const auto want = unrolled_oracle(val, tr, w0, a0, lr);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < m; ++i) num += std::pow(got[i] - want[i], 2), den += want[i] * want[i];
    worst = std::max(worst, std::sqrt(num) / std::max(1e-12, std::sqrt(den)));
    EXPECT_EQ(values(w), w0) << "omega must be restored";
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Hypergrad, ScalarToyClosedForm) {
  // L_val = (w - a)^2, L_tr = (w - 1)^2: w' = w - 2 lr (w - 1), dL/da = -2 (w' - a).
  auto w = Tensor<D>::scalar(0.3, true), a = Tensor<D>::scalar(-0.4, true);
  ParamSet<D> A{{"a", a}}, W{{"w", w}};
  const double lr = 0.1;
  const auto g = hypergrad_onestep<D>(
      A, W, [&] { return square(sub(w, a)); }, [&] { return square(add_scalar(w, -1.0)); }, lr, 1e-2);
  const double w1 = 0.3 - 2 * lr * (0.3 - 1);
  EXPECT_NEAR(g[0], -2 * (w1 + 0.4), 1e-6);
}

TEST(Hypergrad, ZeroInnerRateIsPlainGradient) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto val = rand_quad(4, 3, 2, rng), tr = rand_quad(4, 3, 2, rng);
    const auto w0 = rand_vec(3, rng), a0 = rand_vec(2, rng);
    auto w = Tensor<D>({1, 3, 1, 1}, w0, true);
    auto a = Tensor<D>({1, 2, 1, 1}, a0, true);
    ParamSet<D> A{{"a", a}}, W{{"w", w}};
    const auto got = hypergrad_onestep<D>(A, W, [&] { return val(w, a); }, [&] { return tr(w, a); }, 0.0, 1e-2);
    const auto want = matTvec(val.Q, val.residual(w0, a0));
    EXPECT_LT(max_abs_diff(got, want), 1e-6);
  }
}

TEST(Hypergrad, NoCouplingGivesDirectGradient) {
  Rng rng(3);
  const auto val = rand_quad(4, 3, 2, rng);
  auto tr = rand_quad(4, 3, 2, rng);
  std::fill(tr.Q.v.begin(), tr.Q.v.end(), 0.0);
  const auto w0 = rand_vec(3, rng), a0 = rand_vec(2, rng);
  auto w = Tensor<D>({1, 3, 1, 1}, w0, true);
  auto a = Tensor<D>({1, 2, 1, 1}, a0, true);
  ParamSet<D> A{{"a", a}}, W{{"w", w}};
  const double lr = 0.2;
  const auto got = hypergrad_onestep<D>(A, W, [&] { return val(w, a); }, [&] { return tr(w, a); }, lr, 1e-2);
  auto gw = matTvec(tr.P, tr.residual(w0, a0));
  auto w1 = w0;
  for (std::size_t i = 0; i < 3; ++i) w1[i] -= lr * gw[i];
  EXPECT_LT(max_abs_diff(got, matTvec(val.Q, val.residual(w1, a0))), 1e-6);
}

TEST(Hypergrad, NonFiniteLossIsNumericError) {
  auto w = Tensor<D>::scalar(0.3, true), a = Tensor<D>::scalar(0.1, true);
  ParamSet<D> A{{"a", a}}, W{{"w", w}};
  EXPECT_THROW(hypergrad_onestep<D>(
                   A, W, [&] { return square(sub(w, a)); },
                   [&] { return scale(square(w), std::numeric_limits<D>::infinity()); }, 0.1, 1e-2),
               NumericError);
}

TEST(ToyAlternation, StrictlyDecreasesValidationLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto val = rand_quad(5, 3, 2, rng), tr = rand_quad(5, 3, 2, rng);
    auto w = Tensor<D>({1, 3, 1, 1}, rand_vec(3, rng), true);
    auto a = Tensor<D>({1, 2, 1, 1}, rand_vec(2, rng), true);
    ParamSet<D> A{{"a", a}}, W{{"w", w}};
    const double before = val(w, a).item();
    MomentumSgd<D> opt(1e-3, 0.0);
    const auto h = hypergrad_onestep<D>(A, W, [&] { return val(w, a); }, [&] { return tr(w, a); }, 1e-3, 1e-2);
    EXPECT_GT(descent_step(A, h, opt), 0.0);
    EXPECT_LT(val(w, a).item(), before);
  }
}

TEST(DescentStep, RestartsMomentumWhenItOpposesGradient) {
  auto a = Tensor<D>::vector({0.0, 0.0}, true);
  ParamSet<D> A{{"a", a}};
  MomentumSgd<D> opt(0.1, 0.9);
  EXPECT_GT(descent_step<D>(A, {1.0, 0.0}, opt), 0.0);
  // 0.9 * v + g = 0.4 points against g = -0.5, so the velocity restarts.
  EXPECT_GT(descent_step<D>(A, {-0.5, 0.0}, opt), 0.0);
  EXPECT_NEAR(a.data()[0], -0.1 + 0.05, 1e-15);
}

TEST(SearchConfig, Validation) {
  SearchConfig c;
  EXPECT_NO_THROW(c.validate());
  c.beta = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr_alpha = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SplitDataset, DisjointAndNonempty) {
  auto data = make_synthetic_set<D>(5, 8, 8, 1, {});
  auto s = split_alternate(data);
  EXPECT_EQ(s.train.size(), 3u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_NO_THROW(s.validate());
  s.val.push_back(s.train.front());
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(SplitDataset<D>{}.validate(), ConfigError);
}

TEST(ValLoss, BetaZeroAndTermwise) {
  Rng rng(4);
  auto m = supernet(rng);
  auto data = make_synthetic_set<D>(2, 12, 12, 3, {});
  const Batch<D> b{&data[0], &data[1]};
  const double ls = scene_batch_loss(m, b).item(), lt = task_batch_loss(m, b, false).item();
  EXPECT_EQ(val_loss(m, b, 0.0).item(), ls);
  EXPECT_NEAR(val_loss(m, b, 0.7).item(), ls + 0.7 * lt, 1e-12);
  EXPECT_GE(ls, 0.0);
  EXPECT_GE(lt, 0.0);
  double want = 0;
  for (const auto& s : data)
    want += scene_loss(m.scene.forward(s.input).t, s.input, m.scene.cfg).item() / static_cast<double>(s.input.numel());
  EXPECT_NEAR(ls, want / 2, 1e-12);
}

TEST(Search, DecoupledTaskLeavesTaskLogits) {
  Rng rng(5);
  auto m = supernet(rng);
  for (auto p : m.task_parameters())
    for (auto& v : p.tensor.mutable_data()) v = 0;
  const auto before = flatten_values(m.denoiser.alpha->parameters());
  SearchConfig cfg;
  cfg.beta = 0;
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  auto res = search(m, small_split(4, 12), cfg, rng);
  EXPECT_EQ(flatten_values(res.alpha_t.parameters()), before);
}

TEST(Search, CooperativeDescendsAndUsesDescentDirections) {
  Rng rng(42);
  auto m = supernet(rng);
  SearchConfig cfg;
  cfg.epochs = 5;
  auto res = search(m, small_split(), cfg, rng);
  ASSERT_EQ(res.history.size(), 6u);
  EXPECT_LE(res.history.back().combined, res.history.front().combined);
  ASSERT_FALSE(res.directional.empty());
  for (double d : res.directional) EXPECT_GT(d, 0.0);
  EXPECT_TRUE(res.alpha_s.finite() && res.alpha_t.finite());
  for (const auto& p : m.all_parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

TEST(Search, IndependentMatchesDecoupledCooperativeOnScene) {
  SearchConfig cfg;
  cfg.beta = 0;
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  const auto data = small_split(4, 12);
  auto run = [&](SearchStrategy s) {
    Rng rng(11);
    auto m = supernet(rng);
    auto c = cfg;
    c.strategy = s;
    return search(m, data, c, rng);
  };
  const auto coop = run(SearchStrategy::cooperative);
  const auto ind = run(SearchStrategy::independent);
  EXPECT_EQ(flatten_values(coop.alpha_s.parameters()), flatten_values(ind.alpha_s.parameters()));
  EXPECT_EQ(ind.history.size(), 2 * cfg.epochs + 1);
}

TEST(Search, SeededRunsAreBitwiseIdentical) {
  const auto data = small_split(4, 12);
  SearchConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  auto run = [&] {
    Rng rng(7);
    auto m = supernet(rng);
    return search(m, data, cfg, rng);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].combined, b.history[i].combined);
    EXPECT_EQ(a.history[i].scene_val, b.history[i].scene_val);
  }
  EXPECT_EQ(flatten_values(a.alpha_t.parameters()), flatten_values(b.alpha_t.parameters()));
  EXPECT_EQ(a.momentum, b.momentum);
}

TEST(Search, GlobalOnSingletonSpaceKeepsTrivialArchitecture) {
  Rng rng(8);
  auto m = supernet(rng, {OpKind::rc3});
  SearchConfig cfg;
  cfg.strategy = SearchStrategy::global;
  cfg.epochs = 2;
  cfg.warmup_epochs = 0;
  auto res = search(m, small_split(4, 12), cfg, rng);
  EXPECT_EQ(discretize(res.alpha_s), std::vector<OpKind>(7, OpKind::rc3));
  EXPECT_EQ(discretize(res.alpha_t), std::vector<OpKind>(7, OpKind::rc3));
  EXPECT_EQ(res.history.size(), 3u);
}

TEST(Search, RejectsDiscreteModelAndEmptySplits) {
  Rng rng(9);
  auto m = make_model<D>(SceneConfig{}, TaskConfig{}, std::vector<OpKind>(7, OpKind::c3),
                         std::vector<OpKind>(7, OpKind::c3), rng);
  EXPECT_THROW(search(m, small_split(4, 12), SearchConfig{}, rng), ConfigError);
  auto s = supernet(rng);
  EXPECT_THROW(search(s, SplitDataset<D>{}, SearchConfig{}, rng), ConfigError);
}

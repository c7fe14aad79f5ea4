#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"

using namespace ruas;
using namespace ruas::testing;

namespace {

const std::vector<OpKind> kLow = op_registry(TaskKind::scene);

}  // namespace

TEST(Registry, SceneAndLowTaskShareShadedOps) {
  const std::vector<OpKind> want{OpKind::c1, OpKind::c3, OpKind::rc1, OpKind::rc3, OpKind::dc3_2, OpKind::rdc3_2, OpKind::sc};
  EXPECT_EQ(op_registry(TaskKind::scene), want);
  EXPECT_EQ(op_registry(TaskKind::low_task), want);
}

TEST(Registry, HighTaskExcludesResidualAndSkip) {
  const auto h = op_registry(TaskKind::high_task);
  EXPECT_EQ(h.size(), 10u);
  for (OpKind k : h) EXPECT_FALSE(traits(k).residual || traits(k).skip) << to_string(k);
}

TEST(Registry, NamesRoundTrip) {
  for (OpKind k : kAllOps) EXPECT_EQ(parse_op(to_string(k)), k);
  EXPECT_FALSE(parse_op("9-C").has_value());
}

TEST(ApplyOp, SkipIsIdentity) {
  Rng rng(1);
  auto x = rand_tensor({1, 3, 4, 4}, rng);
  EXPECT_TRUE(apply_op<D>(OpKind::sc, x, std::nullopt).same_node(x));
}

TEST(ApplyOp, ZeroResidualIsIdentity) {
  Rng rng(2);
  auto x = rand_tensor({1, 3, 5, 5}, rng);
  auto w = make_op_weights<D>(OpKind::rc3, 3, rng);
  for (auto& v : w->weight.mutable_data()) v = 0;
  EXPECT_EQ(values(apply_op(OpKind::rc3, x, w)), values(x));
}

TEST(ApplyOp, DilatedImpulseFootprint) {
  auto x = Tensor<D>::zeros({1, 1, 9, 9});
  x.mutable_data()[4 * 9 + 4] = 1.0;
  auto w = OpWeights<D>(ConvWeights<D>{Tensor<D>::full({1, 1, 3, 3}, 1.0), Tensor<D>::zeros({1, 1, 1, 1})});
  const auto got = values(apply_op(OpKind::dc3_2, x, w));
  EXPECT_EQ(got, relu_v(conv_oracle(x, w->weight, nullptr, 2)));
  for (std::size_t y = 0; y < 9; ++y)
    for (std::size_t c = 0; c < 9; ++c) {
      const bool hit = (y == 2 || y == 4 || y == 6) && (c == 2 || c == 4 || c == 6);
      EXPECT_EQ(got[y * 9 + c], hit ? 1.0 : 0.0) << y << "," << c;
    }
}

TEST(ApplyOp, KindMismatchThrows) {
  Rng rng(3);
  auto x = rand_tensor({1, 3, 4, 4}, rng);
  EXPECT_THROW(apply_op(OpKind::c3, x, make_op_weights<D>(OpKind::c1, 3, rng)), ConfigError);
  EXPECT_THROW(apply_op<D>(OpKind::c3, x, std::nullopt), ConfigError);
}

TEST(MixedForward, OneHotEqualsSelectedOp) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = rand_tensor({1, 3, 6, 6}, rng, 0, 1);
    std::vector<OpWeights<D>> ws;
    for (OpKind k : kLow) ws.push_back(make_op_weights<D>(k, 3, rng));
    const std::size_t pick = seed % kLow.size();
    std::vector<D> l(kLow.size(), 0.0);
    l[pick] = 1e3;
    const auto mixed = values(mixed_forward(x, Tensor<D>::vector(l), kLow, ws));
    EXPECT_LT(max_abs_diff(mixed, values(apply_op(kLow[pick], x, ws[pick]))), 1e-6);
  }
}

TEST(MixedForward, IdenticalSkipsReturnInput) {
  Rng rng(4);
  auto x = rand_tensor({1, 3, 4, 4}, rng);
  const auto y = values(mixed_forward<D>(x, Tensor<D>::vector({0.3, -2.0}), {OpKind::sc, OpKind::sc}, {std::nullopt, std::nullopt}));
  EXPECT_LT(max_abs_diff(y, values(x)), 1e-15);
}

TEST(MixedForward, MatchesExplicitWeightedSum) {
  Rng rng(5);
  auto x = rand_tensor({1, 3, 6, 6}, rng, 0, 1);
  std::vector<OpWeights<D>> ws;
  for (OpKind k : kLow) ws.push_back(make_op_weights<D>(k, 3, rng));
  auto l = rand_tensor({1, 1, 1, 7}, rng, -2, 2);
  double z = 0;
  for (D v : l.data()) z += std::exp(v);
  std::vector<D> want(x.numel(), 0.0);
  for (std::size_t k = 0; k < 7; ++k) {
    const auto o = op_oracle(kLow[k], x, ws[k]);
    for (std::size_t i = 0; i < want.size(); ++i) want[i] += std::exp(l.data()[k]) / z * o[i];
  }
  EXPECT_LT(max_abs_diff(values(mixed_forward(x, l, kLow, ws)), want), 1e-9);
}

TEST(MixedForward, LogitGradientPassesCheck) {
  Rng rng(6);
  auto x = rand_tensor({1, 3, 5, 5}, rng, 0, 1);
  std::vector<OpWeights<D>> ws;
  for (OpKind k : kLow) ws.push_back(make_op_weights<D>(k, 3, rng));
  auto l = rand_tensor({1, 1, 1, 7}, rng, -1, 1, true);
  auto r = rand_tensor(x.shape(), rng);
  EXPECT_LT(grad_check<D>([&] { return sum(mul(mixed_forward(x, l, kLow, ws), r)); }, l, 1e-6), 1e-3);
}

TEST(CellSpec, DistillationTopology) {
  const auto s = CellSpec::distillation(3);
  ASSERT_EQ(s.edges.size(), 7u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.edges[i].src, i);
    EXPECT_EQ(s.edges[i].dst, i + 1);
    EXPECT_EQ(s.edges[i].role, EdgeRole::chain);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s.edges[4 + i].src, i);
    EXPECT_EQ(s.edges[4 + i].dst, 4u);
    EXPECT_EQ(s.edges[4 + i].role, EdgeRole::distill);
  }
  for (const auto& e : s.edges) EXPECT_LT(e.src, e.dst);
}

TEST(Cell, SkipCellWithAveragingFusionIsIdentity) {
  Rng rng(7);
  auto cell = Cell<D>::discrete(CellSpec::distillation(3), std::vector<OpKind>(7, OpKind::sc), "c", rng);
  cell.set_averaging_fusion();
  auto x = rand_tensor({1, 3, 6, 5}, rng);
  EXPECT_LT(max_abs_diff(values(cell.forward(x)), values(x)), 1e-6);
  EXPECT_EQ(cell.op_param_count(), 0u);
}

TEST(Cell, ZeroConvWeightsGiveFusionBias) {
  Rng rng(8);
  auto cell = Cell<D>::discrete(CellSpec::distillation(3), std::vector<OpKind>(7, OpKind::c3), "c", rng);
  for (auto& p : cell.parameters()) {
    if (p.name.find("fusion") == std::string::npos) {
      for (auto& v : p.tensor.mutable_data()) v = 0;
    }
  }
  auto b = cell.fusion().bias->mutable_data();
  b[0] = 0.1, b[1] = -0.2, b[2] = 0.3;
  auto x = rand_tensor({1, 3, 4, 4}, rng);
  auto y = cell.forward(x);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y.data()[c * 16 + i], b[c]);
}

TEST(Cell, MatchesStraightLineOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<OpKind> choice;
    for (int e = 0; e < 7; ++e) choice.push_back(kLow[rng() % kLow.size()]);
    auto cell = Cell<D>::discrete(CellSpec::distillation(3), choice, "c", rng);
    for (auto& p : cell.parameters())
      for (auto& v : p.tensor.mutable_data()) v = std::uniform_real_distribution<D>(-0.5, 0.5)(rng);
    auto x = rand_tensor({1, 3, 7, 6}, rng, 0, 1);
    EXPECT_LT(max_abs_diff(values(cell.forward(x)), cell_oracle(x, cell, nullptr)), 1e-9) << "seed " << seed;
  }
}

TEST(Cell, SupernetMatchesOracle) {
  Rng rng(21);
  auto cell = Cell<D>::supernet(CellSpec::distillation(3), kLow, "s", rng);
  auto alpha = ArchParams<D>::init(TaskKind::scene, kLow, 7, "a", rng, 1.0);
  auto x = rand_tensor({1, 3, 5, 5}, rng, 0, 1);
  EXPECT_LT(max_abs_diff(values(cell.forward(x, &alpha)), cell_oracle(x, cell, &alpha)), 1e-9);
  EXPECT_THROW(cell.forward(x), ContractError);
}

TEST(Cell, PreservesShapeAndRejectsWidthMismatch) {
  Rng rng(9);
  auto cell = Cell<D>::supernet(CellSpec::distillation(6), kLow, "t", rng);
  auto alpha = ArchParams<D>::init(TaskKind::low_task, kLow, 7, "a", rng, 2.0);
  auto x = rand_tensor({2, 6, 5, 7}, rng);
  EXPECT_EQ(cell.forward(x, &alpha).shape(), x.shape());
  EXPECT_THROW(cell.forward(rand_tensor({1, 3, 5, 5}, rng), &alpha), ShapeError);
}

TEST(Cell, ParameterCountIsSumOfChosenOps) {
  Rng rng(10);
  std::vector<OpKind> choice{OpKind::c1, OpKind::c3, OpKind::sc, OpKind::rc3, OpKind::dc3_2, OpKind::rdc3_2, OpKind::rc1};
  auto cell = Cell<D>::discrete(CellSpec::distillation(3), choice, "c", rng);
  // conv k x k over 3 -> 3 channels with bias: 9k^2 + 3.
  const std::size_t ops = 12 + 84 + 0 + 84 + 84 + 84 + 12;
  EXPECT_EQ(cell.op_param_count(), ops);
  EXPECT_EQ(param_count(cell.parameters()), ops + 12 * 3 + 3);
  std::set<std::string> names;
  for (const auto& p : cell.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}

TEST(Cost, SingleConvCounts) {
  const ConvFootprint f{3, 3, 3, false};
  EXPECT_EQ(count_cost({f}, 8, 8).params, 81u);
  EXPECT_DOUBLE_EQ(count_cost({f}, 8, 8, 3).mult_adds, 81.0 * 64 * 3);
}

TEST(Discretize, DominantShiftScaleAndTies) {
  ArchParams<D> a;
  a.candidates = kLow;
  a.logits = {Tensor<D>::vector({0, 5, 0, 0, 0, 0, 0}), Tensor<D>::vector(std::vector<D>(7, 0.0))};
  EXPECT_EQ(discretize(a), (std::vector<OpKind>{OpKind::c3, OpKind::c1}));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto r = ArchParams<D>::init(TaskKind::scene, kLow, 7, "a", rng, 1.0);
    const auto base = discretize(r);
    auto shifted = r;
    shifted.logits.clear();
    for (const auto& l : r.logits) shifted.logits.push_back(scale(add_scalar(l, 7.3), 2.5));
    EXPECT_EQ(discretize(shifted), base);
  }
}

TEST(ArchParams, WeightsAreSoftmaxAndFinite) {
  Rng rng(11);
  auto a = ArchParams<D>::init(TaskKind::scene, kLow, 7, "a", rng, 0.5);
  EXPECT_TRUE(a.finite());
  EXPECT_EQ(a.parameters().size(), 7u);
  const auto w = a.weights(2);
  EXPECT_LT(max_abs_diff(w, values(softmax(a.logits[2]))), 1e-15);
}

TEST(UniformBaseline, EveryLowLevelOpBuildsAndRejectsOthers) {
  Rng rng(12);
  for (OpKind k : kLow) {
    auto c = uniform_cell_baseline<D>(k, 3, "u", rng);
    EXPECT_EQ(c.choice(), std::vector<OpKind>(7, k));
  }
  EXPECT_THROW(uniform_cell_baseline<D>(OpKind::c7, 3, "u", rng), ConfigError);
}

TEST(ArchDump, OneLinePerEdge) {
  Rng rng(13);
  auto cell = Cell<D>::supernet(CellSpec::distillation(3), kLow, "s", rng);
  auto a = ArchParams<D>::init(TaskKind::scene, kLow, 7, "a", rng);
  const auto text = arch_dump(cell, &a);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 8);
  EXPECT_NE(text.find("edge 0->1 op="), std::string::npos);
  EXPECT_NE(text.find("edge 2->4 op="), std::string::npos);
}

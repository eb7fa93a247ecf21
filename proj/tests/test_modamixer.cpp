#include <cmath>

#include <gtest/gtest.h>

#include "vlt/gradsuite.hpp"
#include "vlt/modamixer.hpp"

using namespace vlt;
using namespace vlt::modamixer;

namespace {

Tensor random_tensor(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.vec()) v = rng.uniform(-1.0, 1.0);
  return t;
}

const BlockFn kIdentity = [](Var x) { return x; };

}  // namespace

TEST(Mix, UnitSelectorIdentityBlocksDoubles) {
  Rng rng(1);
  const Tensor fv = random_tensor({3, 3, 4}, rng);
  Tape tape;
  const Var out = mix(tape.constant(random_tensor({1, 5}, rng)), tape.constant(fv), tape.constant(Tensor(Shape{5, 4}, 0.0)),
                      tape.constant(Tensor(Shape{1, 4}, 1.0)), kIdentity, kIdentity);
  for (std::size_t i = 0; i < fv.numel(); ++i) EXPECT_EQ(out.value()[i], 2.0 * fv[i]);
}

TEST(Mix, ZeroSelectorKeepsResidual) {
  Rng rng(2);
  const Tensor fv = random_tensor({2, 3, 4}, rng);
  Tape tape;
  const Var out = mix(tape.constant(random_tensor({1, 3}, rng)), tape.constant(fv), tape.constant(Tensor(Shape{3, 4}, 0.0)),
                      tape.constant(Tensor(Shape{1, 4}, 0.0)), kIdentity, kIdentity);
  EXPECT_TRUE(out.value() == fv);
}

TEST(Mix, HandComputedOneByOne) {
  // d=2, C=2: s = f_l W + b = [1*0.5 + 2*(-1) + 0.25, 1*2 + 2*0.5 - 1] = [-1.25, 2]
  // Block_sel = scale 3, Block_vis = scale -1: f_m = 3 * s * f_v - f_v
  Tape tape;
  const Var fl = tape.constant(Tensor::row({1, 2}));
  const Var fv = tape.constant(Tensor(Shape{1, 1, 2}, std::vector<double>{0.4, -0.7}));
  const Var w = tape.constant(Tensor(Shape{2, 2}, std::vector<double>{0.5, 2, -1, 0.5}));
  const Var b = tape.constant(Tensor::row({0.25, -1}));
  const Var out = mix(fl, fv, w, b, [](Var x) { return ops::scale(x, 3.0); }, [](Var x) { return ops::scale(x, -1.0); });
  EXPECT_NEAR(out.value()[0], 3 * -1.25 * 0.4 - 0.4, 1e-12);
  EXPECT_NEAR(out.value()[1], 3 * 2.0 * -0.7 + 0.7, 1e-12);
}

TEST(Mix, DimensionMismatchNamesStage) {
  Tape tape;
  ParamStore store;
  Rng rng(3);
  const ModaMixerParams p{"S/stage2/mixer", 4, 6};
  init_modamixer(store, p, rng);
  ParamBinder binder(tape, store, false);
  try {
    mix_from_store(binder, p, {0, 0}, tape.constant(Tensor(Shape{1, 5})), tape.constant(Tensor(Shape{2, 2, 4})), true);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("S/stage2/mixer"), std::string::npos) << e.what();
  }
}

TEST(Mix, AllOnesSelectorSameBlockOnBothPaths) {
  Rng rng(4);
  const Tensor fv = random_tensor({3, 3, 4}, rng);
  const BlockFn block = [](Var x) { return ops::relu(ops::scale(x, 1.5)); };
  Tape tape;
  const Var out = mix(tape.constant(random_tensor({1, 2}, rng)), tape.constant(fv), tape.constant(Tensor(Shape{2, 4}, 0.0)),
                      tape.constant(Tensor(Shape{1, 4}, 1.0)), block, block);
  const Var once = block(tape.constant(fv));
  for (std::size_t i = 0; i < fv.numel(); ++i) EXPECT_EQ(out.value()[i], 2.0 * once.value()[i]);
}

TEST(Mix, SelectorLinearPerChannel) {
  Rng rng(5);
  const Tensor fl = random_tensor({1, 3}, rng), fv = random_tensor({2, 2, 4}, rng);
  Tensor w = random_tensor({3, 4}, rng), b = random_tensor({1, 4}, rng);
  Tensor w2 = w, b2 = b;
  const std::size_t k = 2;
  const double alpha = 2.5;
  for (std::size_t r = 0; r < 3; ++r) w2.at(r, k) *= alpha;
  b2[k] *= alpha;
  Tape tape;
  const Var pre1 = mix_traced(tape.constant(fl), tape.constant(fv), tape.constant(w), tape.constant(b), kIdentity,
                              kIdentity, false).out;
  const Var pre2 = mix_traced(tape.constant(fl), tape.constant(fv), tape.constant(w2), tape.constant(b2), kIdentity,
                              kIdentity, false).out;
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 4; ++c) {
      const double a = pre1.value()[p * 4 + c], bb = pre2.value()[p * 4 + c];
      if (c == k)
        EXPECT_NEAR(bb, alpha * a, 1e-12 * std::max(1.0, std::abs(a)));
      else
        EXPECT_EQ(bb, a);
    }
}

TEST(MixNoResidual, ZeroSelectorGivesZeroMap) {
  Rng rng(6);
  Tape tape;
  const Var out = mix_no_residual(tape.constant(random_tensor({1, 3}, rng)), tape.constant(random_tensor({2, 2, 4}, rng)),
                                  tape.constant(Tensor(Shape{3, 4}, 0.0)), tape.constant(Tensor(Shape{1, 4}, 0.0)), kIdentity);
  for (double v : out.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(MixNoResidual, UnitSelectorIsSelectedBlock) {
  Rng rng(7);
  const Tensor fv = random_tensor({2, 2, 4}, rng);
  const BlockFn block = [](Var x) { return ops::channel_shuffle(ops::relu(x), 2); };
  Tape tape;
  const Var out = mix_no_residual(tape.constant(random_tensor({1, 3}, rng)), tape.constant(fv),
                                  tape.constant(Tensor(Shape{3, 4}, 0.0)), tape.constant(Tensor(Shape{1, 4}, 1.0)), block);
  EXPECT_TRUE(out.value() == block(tape.constant(fv)).value());
}

TEST(MixNoResidual, DifferenceIsVisionBlock) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const gradsuite::detail::MixerFixture fx(static_cast<int>(seed % 4), static_cast<int>((seed + 1) % 4));
    const std::vector<Tensor> in = fx.make_inputs(rng, 3);
    Tape tape;
    std::vector<Var> v;
    for (const Tensor& t : in) v.push_back(tape.constant(t));
    const MixResult full = fx.forward(tape, v, true);
    const MixResult bare = fx.forward(tape, v, false);
    const Tensor& f = full.out.value();
    const Tensor& s = bare.out.value();
    const Tensor& vis = full.vision_path.value();
    for (std::size_t i = 0; i < f.numel(); ++i) {
      EXPECT_EQ(f[i], s[i] + vis[i]);
      EXPECT_NEAR(f[i] - s[i], vis[i], 1e-15 * std::max(1.0, std::abs(f[i])));
    }
  }
}

TEST(RoiEmbed, ConstantMap) {
  Tape tape;
  const Var out = roi_embed(tape.constant(Tensor(Shape{5, 7, 3}, 3.0)), {0.4, 0.6, 0.3, 0.5});
  for (double v : out.value().vec()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(RoiEmbed, WholeMapGridTwoBilinear) {
  Tape tape;
  const Var out = roi_embed(tape.constant(Tensor(Shape{2, 2, 1}, std::vector<double>{1, 2, 3, 4})), {0.5, 0.5, 1.0, 1.0}, 2);
  EXPECT_DOUBLE_EQ(out.value()[0], 2.5);
}

TEST(RoiEmbed, ShrinkingBoxConvergesToCell) {
  Rng rng(8);
  const Tensor f = random_tensor({4, 4, 2}, rng);
  Tape tape;
  // cell (row 1, col 2) centre sits at x = 2.5 / 4, y = 1.5 / 4
  const Var out = roi_embed(tape.constant(f), {2.5 / 4, 1.5 / 4, 1e-12, 1e-12});
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out.value()[c], f.at(1, 2, c), 1e-9);
}

TEST(RoiEmbed, DegenerateBoxThrows) {
  Tape tape;
  const Var f = tape.constant(Tensor(Shape{2, 2, 1}, 1.0));
  EXPECT_THROW(roi_embed(f, {0.5, 0.5, 0.0, 0.3}), ArgumentError);
  EXPECT_THROW(roi_embed(f, {0.5, 0.5, 0.3, -0.1}), ArgumentError);
}

TEST(ContrastiveLoss, SingleRowIsZero) {
  Rng rng(9);
  EXPECT_EQ(contrastive_loss_value(random_tensor({1, 4}, rng), random_tensor({1, 4}, rng)), 0.0);
}

TEST(ContrastiveLoss, TwoRowClosedForm) {
  const Tensor e(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  EXPECT_NEAR(contrastive_loss_value(e, e, 1.0), std::log(1.0 + std::exp(-1.0)), 1e-9);
  EXPECT_NEAR(contrastive_loss_value(e, e, 1.0), 0.313262, 1e-6);
}

TEST(ContrastiveLoss, OrthonormalLowTemperature) {
  const Tensor e(Shape{3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_LT(contrastive_loss_value(e, e, 0.05), 1e-8);
}

TEST(ContrastiveLoss, RowPermutationInvariant) {
  Rng rng(10);
  const Tensor a = random_tensor({5, 6}, rng), b = random_tensor({5, 6}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor pa(a.shape()), pb(b.shape());
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      pa.at(r, c) = a.at(perm[r], c);
      pb.at(r, c) = b.at(perm[r], c);
    }
  EXPECT_NEAR(contrastive_loss_value(a, b), contrastive_loss_value(pa, pb), 1e-12);
}

TEST(ContrastiveLoss, SymmetricTermsOnSelfPairs) {
  Rng rng(11);
  const Tensor e = random_tensor({4, 3}, rng);
  Tape tape;
  const Var m = ops::cosine_similarity_matrix(tape.constant(e), tape.constant(e));
  const std::vector<std::size_t> labels{0, 1, 2, 3};
  const double rows = ops::softmax_cross_entropy_rows(m, labels).value()[0];
  const double cols = ops::softmax_cross_entropy_rows(ops::transpose(m), labels).value()[0];
  EXPECT_NEAR(rows, cols, 1e-12);
  EXPECT_NEAR(contrastive_loss_value(e, e), rows, 1e-12);
}

TEST(ContrastiveLoss, ZeroRowIsDegenerate) {
  const Tensor a(Shape{2, 2}, std::vector<double>{1, 0, 0, 0});
  EXPECT_THROW(contrastive_loss_value(a, a), DegenerateInputError);
}

TEST(Wiring, TermCounting) {
  ContrastiveWiring both = ContrastiveWiring::first_stage_both(4);
  ContrastiveWiring tmpl_only = both;
  tmpl_only.search = false;
  EXPECT_EQ(both.terms_per_step(), tmpl_only.terms_per_step() + 1);
  EXPECT_EQ(ContrastiveWiring::none(4).terms_per_step(), 0u);
}

TEST(Wiring, MismatchedChannelsRejectedAtBuild) {
  const StageLayout layout = StageLayout::compact();
  ContrastiveWiring w = ContrastiveWiring::first_stage_both(4);
  EXPECT_NO_THROW(w.validate(layout, {16, 16, 32, 32}));
  EXPECT_THROW(w.validate(layout, {12, 16, 32, 32}), ContractError);
  w.stages.assign(5, true);
  EXPECT_THROW(w.validate(layout), ContractError);
}

TEST(MixGradient, PassesGradCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const gradsuite::detail::MixerFixture fx(0, 1);
    const GradReport r = grad_check(
        [&](Tape& tape, const std::vector<Var>& v) { return gradsuite::scalarize(fx.forward(tape, v).out); },
        fx.make_inputs(rng, 3), 1e-4, 1e-5);
    EXPECT_TRUE(r.pass) << r.worst();
  }
}

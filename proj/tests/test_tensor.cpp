#include <cmath>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "vlt/ops.hpp"
#include "vlt/random.hpp"

using namespace vlt;

namespace {

Tensor random_tensor(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.vec()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Tensor run1(const Tensor& x, const std::function<Var(Var)>& f) {
  Tape tape;
  return f(tape.constant(x)).value();
}

Tensor run2(const Tensor& a, const Tensor& b, const std::function<Var(Var, Var)>& f) {
  Tape tape;
  return f(tape.constant(a), tape.constant(b)).value();
}

}  // namespace

TEST(TensorTest, DataLengthMatchesShape) {
  Tensor t(Shape{2, 3, 4}, 1.5);
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
}

TEST(TensorTest, GoldenFormatRoundTrip) {
  Rng rng(4);
  const Tensor t = random_tensor({2, 3, 2}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "shape: 2 3 2");
  ss.seekg(0);
  const Tensor back = read_tensor(ss);
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back[i], t[i]);
}

TEST(TensorTest, RowMajorHwcIndex) {
  Tensor t(Shape{2, 3, 4});
  std::iota(t.vec().begin(), t.vec().end(), 0.0);
  EXPECT_EQ(t.at(1, 2, 3), 23.0);
  EXPECT_EQ(t.at(0, 1, 2), 6.0);
}

TEST(HadamardSelect, IdentitySelector) {
  Rng rng(1);
  const Tensor f = random_tensor({2, 2, 3}, rng);
  const Tensor out = run2(Tensor::row({1, 1, 1}), f, ops::hadamard_select);
  EXPECT_TRUE(out == f);
}

TEST(HadamardSelect, ScalarArithmetic) {
  const Tensor f(Shape{1, 1, 2}, std::vector<double>{3, 5});
  const Tensor out = run2(Tensor::row({2, 0}), f, ops::hadamard_select);
  EXPECT_EQ(out[0], 6.0);
  EXPECT_EQ(out[1], 0.0);
}

TEST(HadamardSelect, MatchesElementwiseLoop) {
  Rng rng(2);
  const Tensor s = random_tensor({1, 4}, rng);
  const Tensor f = random_tensor({2, 2, 4}, rng);
  const Tensor out = run2(s, f, ops::hadamard_select);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t w = 0; w < 2; ++w)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.at(h, w, c), s[c] * f.at(h, w, c));
}

TEST(HadamardSelect, Bilinear) {
  Rng rng(3);
  const Tensor s = random_tensor({1, 5}, rng);
  const Tensor f = random_tensor({3, 2, 5}, rng);
  const double alpha = 1.7;
  Tensor as = s, af = f;
  for (double& v : as.vec()) v *= alpha;
  for (double& v : af.vec()) v *= alpha;
  const Tensor base = run2(s, f, ops::hadamard_select);
  const Tensor a = run2(as, f, ops::hadamard_select);
  const Tensor b = run2(s, af, ops::hadamard_select);
  for (std::size_t i = 0; i < base.numel(); ++i) {
    const double want = alpha * base[i];
    EXPECT_LE(std::abs(a[i] - want), 1e-12 * std::max(1.0, std::abs(want)));
    EXPECT_LE(std::abs(b[i] - want), 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(HadamardSelect, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    ops::hadamard_select(tape.constant(Tensor::row({1, 2})), tape.constant(Tensor(Shape{2, 2, 3})));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1x2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x2x3]"), std::string::npos) << msg;
  }
}

TEST(ChannelShuffle, GroupsOneIsIdentity) {
  Rng rng(5);
  const Tensor f = random_tensor({2, 2, 6}, rng);
  EXPECT_TRUE(run1(f, [](Var x) { return ops::channel_shuffle(x, 1); }) == f);
}

TEST(ChannelShuffle, GroupTranspose) {
  const Tensor f(Shape{1, 1, 4}, std::vector<double>{10, 11, 12, 13});
  const Tensor out = run1(f, [](Var x) { return ops::channel_shuffle(x, 2); });
  EXPECT_EQ(out.vec(), (std::vector<double>{10, 12, 11, 13}));
}

TEST(ChannelShuffle, TwiceOnFourChannelsRestoresOrder) {
  Rng rng(6);
  const Tensor f = random_tensor({3, 3, 4}, rng);
  const Tensor out = run1(f, [](Var x) { return ops::channel_shuffle(ops::channel_shuffle(x, 2), 2); });
  EXPECT_TRUE(out == f);
}

TEST(ChannelShuffle, PreservesMultisetPerSite) {
  Rng rng(7);
  const Tensor f = random_tensor({2, 3, 12}, rng);
  const Tensor out = run1(f, [](Var x) { return ops::channel_shuffle(x, 3); });
  for (std::size_t p = 0; p < 6; ++p) {
    std::vector<double> a(f.vec().begin() + p * 12, f.vec().begin() + (p + 1) * 12);
    std::vector<double> b(out.vec().begin() + p * 12, out.vec().begin() + (p + 1) * 12);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(ChannelShuffle, IndivisibleGroupsThrow) {
  Tape tape;
  EXPECT_THROW(ops::channel_shuffle(tape.constant(Tensor(Shape{1, 1, 5})), 2), ArgumentError);
}

TEST(CosineSimilarity, OrthonormalRowsGiveIdentity) {
  const Tensor a(Shape{3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor out = run2(a, a, ops::cosine_similarity_matrix);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out.at(i, j), i == j ? 1.0 : 0.0);
}

TEST(CosineSimilarity, OrthogonalPairIsZero) {
  const Tensor a(Shape{2, 2}, std::vector<double>{2, 0, 1, 1});
  const Tensor b(Shape{2, 2}, std::vector<double>{1, 1, 0, 3});
  const Tensor out = run2(a, b, ops::cosine_similarity_matrix);
  EXPECT_EQ(out.at(0, 1), 0.0);
}

TEST(CosineSimilarity, MatchesDotOverNorms) {
  Rng rng(8);
  const Tensor a = random_tensor({2, 3}, rng);
  const Tensor b = random_tensor({2, 3}, rng);
  const Tensor out = run2(a, b, ops::cosine_similarity_matrix);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        dot += a.at(i, c) * b.at(j, c);
        na += a.at(i, c) * a.at(i, c);
        nb += b.at(j, c) * b.at(j, c);
      }
      EXPECT_NEAR(out.at(i, j), dot / std::sqrt(na * nb), 1e-12);
    }
}

TEST(CosineSimilarity, UnitDiagonalOnSelf) {
  Rng rng(9);
  const Tensor a = random_tensor({5, 4}, rng);
  const Tensor out = run2(a, a, ops::cosine_similarity_matrix);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out.at(i, i), 1.0, 1e-12);
}

TEST(CosineSimilarity, ZeroRowIsDegenerate) {
  Tape tape;
  const Tensor a(Shape{2, 2}, std::vector<double>{1, 0, 0, 0});
  EXPECT_THROW(ops::cosine_similarity_matrix(tape.constant(a), tape.constant(a)), DegenerateInputError);
}

namespace {
double ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  Tape tape;
  return ops::softmax_cross_entropy_rows(tape.constant(logits), labels).value()[0];
}
}  // namespace

TEST(SoftmaxCrossEntropy, SingleLogitIsZero) {
  EXPECT_EQ(ce(Tensor(Shape{1, 1}, 4.2), {0}), 0.0);
}

TEST(SoftmaxCrossEntropy, UniformRowIsLn2) {
  EXPECT_NEAR(ce(Tensor(Shape{1, 2}, 1.0), {0}), std::log(2.0), 1e-15);
}

TEST(SoftmaxCrossEntropy, MatchesLogSumExp) {
  Rng rng(10);
  const Tensor l = random_tensor({3, 3}, rng);
  const std::vector<std::size_t> labels{2, 0, 1};
  double want = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += std::exp(l.at(r, c));
    want += std::log(s) - l.at(r, labels[r]);
  }
  EXPECT_NEAR(ce(l, labels), want / 3.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, PositiveBeyondOneRow) {
  Rng rng(11);
  for (int k = 0; k < 50; ++k) {
    const std::size_t b = 2 + k % 4;
    const Tensor l = random_tensor({b, b}, rng);
    std::vector<std::size_t> labels(b);
    std::iota(labels.begin(), labels.end(), std::size_t{0});
    EXPECT_GT(ce(l, labels), 0.0);
  }
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  Tape tape;
  EXPECT_THROW(ops::softmax_cross_entropy_rows(tape.constant(Tensor(Shape{2, 2})), {0, 2}), ArgumentError);
}

TEST(DepthwiseXcorr, SlidingWindowOracle) {
  Rng rng(12);
  const Tensor t = random_tensor({2, 2, 1}, rng);
  const Tensor s = random_tensor({4, 4, 1}, rng);
  const Tensor out = run2(t, s, ops::depthwise_xcorr);
  ASSERT_EQ(out.shape(), (Shape{3, 3, 1}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double want = 0;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) want += t.at(a, b, 0) * s.at(i + a, j + b, 0);
      EXPECT_NEAR(out.at(i, j, 0), want, 1e-14);
    }
}

TEST(DepthwiseXcorr, TemplateLargerThanSearchThrows) {
  Tape tape;
  EXPECT_THROW(ops::depthwise_xcorr(tape.constant(Tensor(Shape{5, 5, 1})), tape.constant(Tensor(Shape{4, 4, 1}))),
               ArgumentError);
}

TEST(Ops, FiniteOnFiniteInputs) {
  Rng rng(13);
  const Tensor x = random_tensor({6, 6, 8}, rng);
  Tape tape;
  const Var v = tape.constant(x);
  const Var w = tape.constant(random_tensor({3, 3, 8, 8}, rng));
  const Var y = ops::relu(ops::conv2d(v, w, 2));
  const Var z = ops::spatial_standardize(ops::channel_shuffle(y, 2));
  EXPECT_TRUE(z.value().all_finite());
  EXPECT_EQ(y.shape(), (Shape{3, 3, 8}));
}

TEST(Ops, ConvMatchesDirectSum) {
  Rng rng(14);
  const Tensor x = random_tensor({4, 4, 2}, rng);
  const Tensor w = random_tensor({3, 3, 2, 3}, rng);
  const Tensor out = run2(x, w, [](Var a, Var b) { return ops::conv2d(a, b, 1); });
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t o = 0; o < 3; ++o) {
        double want = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = static_cast<int>(h) + dy, xx = static_cast<int>(q) + dx;
            if (yy < 0 || xx < 0 || yy >= 4 || xx >= 4) continue;
            for (std::size_t c = 0; c < 2; ++c)
              want += x.at(yy, xx, c) * w[((static_cast<std::size_t>(dy + 1) * 3 + static_cast<std::size_t>(dx + 1)) * 2 + c) * 3 + o];
          }
        EXPECT_NEAR(out.at(h, q, o), want, 1e-13);
      }
}

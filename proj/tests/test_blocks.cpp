#include <gtest/gtest.h>

#include "vlt/blocks.hpp"

using namespace vlt;

namespace {

Tensor run_block(const BlockChoice& b, const Tensor& x, std::uint64_t seed, ParamStore* out_store = nullptr) {
  ParamStore store;
  Rng rng(seed);
  blocks::init_block(store, "b", b, rng);
  Tape tape;
  ParamBinder p(tape, store, false);
  Tensor y = blocks::block_forward(p, "b", b, tape.constant(x)).value();
  if (out_store) *out_store = store;
  return y;
}

Tensor random_map(std::size_t h, std::size_t c, Rng& rng) {
  Tensor t(Shape{h, h, c});
  for (double& v : t.vec()) v = rng.uniform(-1, 1);
  return t;
}

}  // namespace

TEST(Blocks, OutputShapes) {
  Rng rng(1);
  const Tensor x = random_map(8, 8, rng);
  for (int k = 0; k < kChoices; ++k) {
    const BlockKind kind = static_cast<BlockKind>(k);
    EXPECT_EQ(run_block({kind, 1, 8, 8}, x, 1).shape(), (Shape{8, 8, 8}));
    EXPECT_EQ(run_block({kind, 2, 8, 16}, x, 1).shape(), (Shape{4, 4, 16}));
    EXPECT_EQ(run_block({kind, 1, 8, 12}, x, 1).shape(), (Shape{8, 8, 12}));
  }
}

TEST(Blocks, KernelSizesFollowChoice) {
  Rng rng(2);
  const Tensor x = random_map(8, 8, rng);
  const std::size_t expect[3] = {3, 5, 7};
  for (int k = 0; k < 3; ++k) {
    ParamStore s;
    run_block({static_cast<BlockKind>(k), 1, 8, 8}, x, 3, &s);
    EXPECT_EQ(s.value("b/dw.w").dim(0), expect[k]);
  }
  ParamStore s;
  run_block({BlockKind::Xception3, 1, 8, 8}, x, 3, &s);
  for (const char* key : {"b/dw1.w", "b/dw2.w", "b/dw3.w"}) EXPECT_EQ(s.value(key).dim(0), 3u);
}

TEST(Blocks, NonEntryPassesHalfThrough) {
  // Before the shuffle the first half is the untouched input half; channel_shuffle(2)
  // interleaves it into the even output channels.
  Rng rng(4);
  const Tensor x = random_map(5, 8, rng);
  for (int k = 0; k < kChoices; ++k) {
    const Tensor y = run_block({static_cast<BlockKind>(k), 1, 8, 8}, x, 5);
    for (std::size_t p = 0; p < 25; ++p)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y[p * 8 + 2 * c], x[p * 8 + c]);
  }
}

TEST(Blocks, WrongInputChannelsThrow) {
  Rng rng(6);
  EXPECT_THROW(run_block({BlockKind::Shuffle3, 1, 8, 8}, random_map(4, 6, rng), 1), DimensionError);
}

TEST(Blocks, DeterministicInit) {
  ParamStore a, b;
  Rng r1(9), r2(9);
  blocks::init_block(a, "x", {BlockKind::Shuffle7, 2, 8, 16}, r1);
  blocks::init_block(b, "x", {BlockKind::Shuffle7, 2, 8, 16}, r2);
  EXPECT_EQ(checksums(a), checksums(b));
}

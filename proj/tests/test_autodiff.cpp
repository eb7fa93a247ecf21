#include <gtest/gtest.h>

#include "vlt/autodiff.hpp"
#include "vlt/ops.hpp"

using namespace vlt;

TEST(Tape, InputsPrecedeConsumers) {
  Tape tape;
  const Var a = tape.leaf(Tensor(Shape{2, 2}, 1.0));
  const Var b = tape.leaf(Tensor(Shape{2, 2}, 2.0));
  const Var c = ops::add(a, ops::scale(b, 3.0));
  ops::sum(ops::add(c, a));
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (std::size_t in : tape.node(i).inputs) EXPECT_LT(in, i);
}

TEST(Tape, BackwardVisitsEachNodeOnce) {
  Tape tape;
  const Var x = tape.leaf(Tensor(Shape{3}, std::vector<double>{1, 2, 3}));
  int calls = 0;
  const Var y = tape.record("probe", {x}, x.value(), [&calls, id = x.id()](Tape& t, const Tensor& g) {
    ++calls;
    t.accumulate(id, g);
  });
  // y feeds three consumers; its backward must still run once with the summed gradient.
  const Var out = ops::add_n({ops::sum(y), ops::sum(ops::scale(y, 2.0)), ops::sum(y)});
  tape.backward(out);
  EXPECT_EQ(calls, 1);
  for (double g : x.grad().vec()) EXPECT_EQ(g, 4.0);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(3.0));
  tape.backward(ops::add(ops::scale(x, 2.0), ops::scale(x, 5.0)));
  EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  const Var c = tape.constant(Tensor::scalar(2.0));
  const Var x = tape.leaf(Tensor::scalar(1.0));
  tape.backward(ops::add(c, x));
  EXPECT_FALSE(tape.requires_grad(c.id()));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Tape, BackwardNeedsScalar) {
  Tape tape;
  const Var x = tape.leaf(Tensor(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Tape, RepeatedBackwardIsIdempotent) {
  Tape tape;
  const Var x = tape.leaf(Tensor(Shape{2}, std::vector<double>{1, -2}));
  const Var out = ops::sum(ops::relu(x));
  tape.backward(out);
  const Tensor first = x.grad();
  tape.backward(out);
  EXPECT_TRUE(x.grad() == first);
}

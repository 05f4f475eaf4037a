#include <cmath>

#include <gtest/gtest.h>

#include "cloudadv/tensor.hpp"
#include "gradcheck.hpp"

using namespace cloudadv::tensor;
using cloudadv::Rng;
using cloudadv::testing::gradient_check;
using cloudadv::testing::random_tensor;

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + cloudadv::uniform_index(rng, hi - lo + 1); }

}  // namespace

TEST(Sizes, ConvAndDeconvArithmetic) {
  EXPECT_EQ(deconv_output_size(3, 3, 2, 1), 5u);
  EXPECT_EQ(deconv_output_size(5, 3, 2, 1), 9u);
  EXPECT_EQ(deconv_output_size(9, 3, 2, 1), 17u);
  EXPECT_EQ(deconv_output_size(17, 3, 2, 1), 33u);
  EXPECT_EQ(deconv_output_size(33, 3, 2, 1), 65u);
  EXPECT_EQ(conv_output_size(65, 3, 2, 1), 33u);
  EXPECT_EQ(conv_output_size(5, 3, 2, 1), 3u);
}

TEST(FullyConnected, IdentityAndZeroInput) {
  Rng rng(1);
  Tape<double> tape;
  const auto xv = random_tensor<double>({3, 4}, rng);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  const Var x = tape.leaf(xv);
  const Var y = tape.fully_connected(x, tape.leaf(eye), tape.leaf(Tensor<double>({4})));
  EXPECT_EQ(tape.value(y), xv);

  const auto bias = random_tensor<double>({4}, rng);
  const Var z = tape.fully_connected(tape.leaf(Tensor<double>({2, 4})), tape.leaf(eye), tape.leaf(bias));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(tape.value(z)[b * 4 + j], bias[j]);
}

TEST(FullyConnected, GradientCheck) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t b = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
    const double err = gradient_check<double>(
        {random_tensor<double>({b, in}, rng), random_tensor<double>({in, out}, rng), random_tensor<double>({out}, rng)},
        [](Tape<double>& t, const std::vector<Var>& v) { return t.fully_connected(v[0], v[1], v[2]); }, rng);
    EXPECT_LT(err, 1e-6);
  }
}

TEST(FullyConnected, ShapeMismatchThrows) {
  Tape<double> tape;
  EXPECT_THROW(tape.fully_connected(tape.leaf(Tensor<double>({2, 3})), tape.leaf(Tensor<double>({4, 2})),
                                    tape.leaf(Tensor<double>({2}))),
               ShapeError);
}

TEST(Deconv, ThreeToFive) {
  Rng rng(3);
  Tape<double> tape;
  const Var y = tape.deconv2d(tape.leaf(random_tensor<double>({1, 2, 3, 3}, rng)),
                              tape.leaf(random_tensor<double>({2, 4, 3, 3}, rng)), tape.leaf(Tensor<double>({4})), 2, 1);
  EXPECT_EQ(tape.value(y).shape(), (Shape{1, 4, 5, 5}));
}

TEST(Deconv, OneHotKernelScatters) {
  // A one-hot kernel at tap (kh, kw) sends input (i, j) to output
  // (i*stride + kh - pad, j*stride + kw - pad) when that lands inside.
  Rng rng(4);
  const auto x = random_tensor<double>({1, 1, 2, 2}, rng);
  for (std::size_t kh = 0; kh < 3; ++kh) {
    for (std::size_t kw = 0; kw < 3; ++kw) {
      Tensor<double> k({1, 1, 3, 3});
      k[kh * 3 + kw] = 1.0;
      Tape<double> tape;
      const Var y = tape.deconv2d(tape.leaf(x), tape.leaf(k), tape.leaf(Tensor<double>({1})), 2, 1);
      const auto& out = tape.value(y);
      ASSERT_EQ(out.shape(), (Shape{1, 1, 3, 3}));
      Tensor<double> expected({1, 1, 3, 3});
      for (long i = 0; i < 2; ++i) {
        for (long j = 0; j < 2; ++j) {
          const long oi = i * 2 + long(kh) - 1, oj = j * 2 + long(kw) - 1;
          if (oi >= 0 && oi < 3 && oj >= 0 && oj < 3) expected[std::size_t(oi * 3 + oj)] += x[std::size_t(i * 2 + j)];
        }
      }
      EXPECT_EQ(out, expected) << "tap " << kh << "," << kw;
    }
  }
}

TEST(Deconv, GradientCheck) {
  Rng rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3), s = pick(rng, 2, 4);
    const double err = gradient_check<double>(
        {random_tensor<double>({b, ci, s, s}, rng), random_tensor<double>({ci, co, 3, 3}, rng),
         random_tensor<double>({co}, rng)},
        [](Tape<double>& t, const std::vector<Var>& v) { return t.deconv2d(v[0], v[1], v[2], 2, 1); }, rng);
    EXPECT_LT(err, 1e-6);
  }
}

TEST(Conv, SixtyFiveToThirtyThree) {
  Tape<double> tape;
  const Var y = tape.conv2d(tape.leaf(Tensor<double>({1, 2, 65, 65})), tape.leaf(Tensor<double>({3, 2, 3, 3})),
                            tape.leaf(Tensor<double>({3})), 2, 1);
  EXPECT_EQ(tape.value(y).shape(), (Shape{1, 3, 33, 33}));
}

TEST(Conv, AveragingKernelKeepsConstant) {
  Tape<double> tape;
  const Var y = tape.conv2d(tape.leaf(Tensor<double>({1, 1, 6, 6}, 0.37)), tape.leaf(Tensor<double>({1, 1, 3, 3}, 1.0 / 9)),
                            tape.leaf(Tensor<double>({1})), 1, 0);
  for (double v : tape.value(y).data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Conv, GradientCheck) {
  Rng rng(6);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3), s = pick(rng, 3, 7);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const double err = gradient_check<double>(
        {random_tensor<double>({b, ci, s, s}, rng), random_tensor<double>({co, ci, 3, 3}, rng),
         random_tensor<double>({co}, rng)},
        [=](Tape<double>& t, const std::vector<Var>& v) { return t.conv2d(v[0], v[1], v[2], stride, pad); }, rng);
    EXPECT_LT(err, 1e-6);
  }
}

TEST(Conv, ChannelMismatchThrows) {
  Tape<double> tape;
  EXPECT_THROW(tape.conv2d(tape.leaf(Tensor<double>({1, 2, 5, 5})), tape.leaf(Tensor<double>({1, 3, 3, 3})),
                           tape.leaf(Tensor<double>({1})), 2, 1),
               ShapeError);
}

TEST(Activations, Values) {
  Tape<double> tape;
  const Var x = tape.leaf(Tensor<double>({3}, {0.0, -1.0, 2.0}));
  EXPECT_EQ(tape.value(tape.tanh(x))[0], 0.0);
  EXPECT_EQ(tape.value(tape.sigmoid(x))[0], 0.5);
  const auto& lr = tape.value(tape.leaky_relu(x, 0.2));
  EXPECT_DOUBLE_EQ(lr[1], -0.2);
  EXPECT_EQ(lr[2], 2.0);
}

TEST(Activations, GradientChecksAwayFromKinks) {
  Rng rng(7);
  auto x = random_tensor<double>({2, 3, 4}, rng, -2, 2);
  cloudadv::testing::push_away_from_zero(x);
  EXPECT_LT(gradient_check<double>({x}, [](Tape<double>& t, const std::vector<Var>& v) { return t.leaky_relu(v[0]); }, rng),
            1e-6);
  EXPECT_LT(gradient_check<double>({x}, [](Tape<double>& t, const std::vector<Var>& v) { return t.tanh(v[0]); }, rng), 1e-6);
  EXPECT_LT(gradient_check<double>({x}, [](Tape<double>& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); }, rng),
            1e-6);
}

TEST(Activations, LeakyReluSubgradientAtZeroIsSlope) {
  Tape<double> tape;
  const Var x = tape.leaf(Tensor<double>({1}, {0.0}), true);
  tape.backward(tape.leaky_relu(x, 0.2));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 0.2);
}

TEST(Concat, SliceRecoversInputs) {
  Rng rng(8);
  const auto a = random_tensor<double>({2, 3, 4, 4}, rng);
  const auto b = random_tensor<double>({2, 2, 4, 4}, rng);
  Tape<double> tape;
  const Var c = tape.concat_channels(tape.leaf(a), tape.leaf(b));
  EXPECT_EQ(tape.value(c).dim(1), 5u);
  EXPECT_EQ(tape.value(tape.slice_channels(c, 0, 3)), a);
  EXPECT_EQ(tape.value(tape.slice_channels(c, 3, 5)), b);
}

TEST(Concat, SpatialMismatchThrows) {
  Tape<double> tape;
  EXPECT_THROW(tape.concat_channels(tape.leaf(Tensor<double>({1, 1, 4, 4})), tape.leaf(Tensor<double>({1, 1, 4, 5}))),
               ShapeError);
}

TEST(Concat, GradientRouting) {
  Rng rng(9);
  const double err = gradient_check<double>(
      {random_tensor<double>({2, 2, 3, 3}, rng), random_tensor<double>({2, 3, 3, 3}, rng)},
      [](Tape<double>& t, const std::vector<Var>& v) {
        const Var c = t.concat_channels(v[0], v[1]);
        return t.add(t.slice_channels(c, 1, 4), t.scale(t.slice_channels(c, 0, 3), 0.5));
      },
      rng);
  EXPECT_LT(err, 1e-6);
}

TEST(Bce, ValuesAndGradient) {
  Tape<double> tape;
  EXPECT_LE(tape.value(tape.bce_loss(tape.leaf(Tensor<double>({2}, {1.0, 1.0})), 1.0))[0], -std::log(1 - 1e-7) + 1e-12);
  EXPECT_LE(tape.value(tape.bce_loss(tape.leaf(Tensor<double>({1}, {0.0})), 0.0))[0], -std::log(1 - 1e-7) + 1e-12);
  EXPECT_NEAR(tape.value(tape.bce_loss(tape.leaf(Tensor<double>({3}, 0.5)), 1.0))[0], std::log(2.0), 1e-15);

  Rng rng(10);
  for (double target : {0.0, 1.0}) {
    const double err = gradient_check<double>(
        {random_tensor<double>({4, 1}, rng, 0.05, 0.95)},
        [target](Tape<double>& t, const std::vector<Var>& v) { return t.bce_loss(v[0], target); }, rng);
    EXPECT_LT(err, 1e-6);
  }
}

TEST(BceWithLogits, MatchesSigmoidFormAndGradient) {
  Rng rng(15);
  const auto z = random_tensor<double>({5, 1}, rng, -4, 4);
  for (double target : {0.0, 0.9, 1.0}) {
    Tape<double> tape;
    const double direct = tape.value(tape.bce_with_logits(tape.leaf(z), target))[0];
    double expected = 0.0;
    for (double v : z.data()) {
      const double p = 1.0 / (1.0 + std::exp(-v));
      expected -= target * std::log(p) + (1 - target) * std::log(1 - p);
    }
    EXPECT_NEAR(direct, expected / static_cast<double>(z.size()), 1e-12);
    const double err = gradient_check<double>(
        {z}, [target](Tape<double>& t, const std::vector<Var>& v) { return t.bce_with_logits(v[0], target); }, rng);
    EXPECT_LT(err, 1e-6);
  }
  // Large logits stay finite where the probability form would saturate.
  Tape<double> tape;
  const Var big = tape.leaf(Tensor<double>({1}, {-80.0}), true);
  const Var loss = tape.bce_with_logits(big, 1.0);
  EXPECT_NEAR(tape.value(loss)[0], 80.0, 1e-9);
  tape.backward(loss);
  EXPECT_NEAR(tape.grad(big)[0], -1.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientAndUniformValue) {
  Rng rng(11);
  const std::vector<std::size_t> labels{0, 2, 1};
  Tape<double> tape;
  EXPECT_NEAR(tape.value(tape.softmax_cross_entropy(tape.leaf(Tensor<double>({3, 4})), labels))[0], std::log(4.0), 1e-15);
  const double err = gradient_check<double>(
      {random_tensor<double>({3, 4}, rng, -3, 3)},
      [&](Tape<double>& t, const std::vector<Var>& v) { return t.softmax_cross_entropy(v[0], labels); }, rng);
  EXPECT_LT(err, 1e-6);
}

TEST(Tape, BackwardIsLinearInLosses) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_tensor<double>({2, 3}, rng);
    const auto w1 = random_tensor<double>({3, 2}, rng);
    const auto w2 = random_tensor<double>({3, 1}, rng);
    auto grads = [&](int which) {
      Tape<double> tape;
      const Var xv = tape.leaf(x, true);
      const Var h = tape.tanh(tape.fully_connected(xv, tape.leaf(w1), tape.leaf(Tensor<double>({2}))));
      const Var l1 = tape.bce_loss(tape.sigmoid(h), 1.0);
      const Var l2 = tape.bce_loss(
          tape.sigmoid(tape.fully_connected(xv, tape.leaf(w2), tape.leaf(Tensor<double>({1})))), 0.0);
      tape.backward(which == 0 ? l1 : which == 1 ? l2 : tape.add(l1, l2));
      return tape.grad(xv);
    };
    const auto g1 = grads(0), g2 = grads(1), g12 = grads(2);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-14);
  }
}

TEST(Tape, OperationsDoNotMutateInputs) {
  Rng rng(13);
  const auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  const auto k = random_tensor<double>({2, 2, 3, 3}, rng);
  const auto b = random_tensor<double>({2}, rng);
  Tape<double> tape;
  const Var xv = tape.leaf(x, true), kv = tape.leaf(k, true), bv = tape.leaf(b, true);
  const Var y = tape.tanh(tape.deconv2d(tape.leaky_relu(tape.conv2d(xv, kv, bv, 2, 1)), kv, bv, 2, 1));
  const Var loss = tape.bce_loss(tape.sigmoid(y), 1.0);
  tape.backward(loss);
  EXPECT_EQ(tape.value(xv), x);
  EXPECT_EQ(tape.value(kv), k);
  EXPECT_EQ(tape.value(bv), b);
}

TEST(Tape, FloatModeGradientsWithinLooseTolerance) {
  Rng rng(14);
  const double err = gradient_check<float>(
      {random_tensor<float>({2, 2, 3, 3}, rng), random_tensor<float>({2, 3, 3, 3}, rng), random_tensor<float>({3}, rng)},
      [](Tape<float>& t, const std::vector<Var>& v) { return t.tanh(t.deconv2d(v[0], v[1], v[2], 2, 1)); }, rng, 1e-2);
  EXPECT_LT(err, 1e-2);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(15);
  Tensor<double> p = random_tensor<double>({5}, rng);
  const Tensor<double> before = p;
  AdamState<double> state;
  std::vector<Tensor<double>*> params{&p};
  const std::vector<Tensor<double>> grads{Tensor<double>({5})};
  for (int i = 0; i < 3; ++i) adam_step<double>(params, grads, state);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step, 3u);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  // m_hat = g and v_hat = g^2 after one step, so the move is lr * g / (|g| + eps).
  Tensor<double> p({3}, {0.0, 1.0, -1.0});
  AdamState<double> state;
  std::vector<Tensor<double>*> params{&p};
  const std::vector<Tensor<double>> grads{Tensor<double>({3}, {0.3, -2.0, 1e-3})};
  adam_step<double>(params, grads, state);
  EXPECT_NEAR(p[0], 0.0 - 2e-4 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], 1.0 + 2e-4 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[2], -1.0 - 2e-4 * 1e-3 / (1e-3 + 1e-8), 1e-15);
}

TEST(Adam, DeterministicAndShapeChecked) {
  auto run = [] {
    Rng rng(16);
    Tensor<float> p = random_tensor<float>({4, 4}, rng);
    AdamState<float> state;
    std::vector<Tensor<float>*> params{&p};
    for (int i = 0; i < 10; ++i) {
      const std::vector<Tensor<float>> grads{random_tensor<float>({4, 4}, rng)};
      adam_step<float>(params, grads, state);
    }
    return p;
  };
  EXPECT_EQ(run(), run());

  Tensor<double> p({2});
  AdamState<double> state;
  std::vector<Tensor<double>*> params{&p};
  const std::vector<Tensor<double>> bad{Tensor<double>({3})};
  EXPECT_THROW(adam_step<double>(params, bad, state), ShapeError);
}

TEST(Init, UniformWithinFanInBound) {
  Rng rng(17);
  const auto t = uniform_init<float>({16, 8, 3, 3}, 8 * 9, rng);
  const double bound = std::sqrt(1.0 / 72.0);
  for (float v : t.data()) EXPECT_LE(std::abs(v), bound);
}

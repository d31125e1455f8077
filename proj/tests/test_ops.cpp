#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "balloonseg/ops.hpp"
#include "support/oracles.hpp"

namespace {

using bseg::LayerParams;
using bseg::Shape;
using bseg::Tensor;

LayerParams<double> ones_kernel(std::size_t n, std::size_t c, std::size_t k) {
  return {"k", Tensor<double>(Shape{n, c, k, k}, 1.0), std::nullopt, false};
}

TEST(Conv2d, AllOnesKernelCenterAndCorner) {
  Tensor<double> x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto y = bseg::conv2d(x, ones_kernel(1, 1, 3));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_DOUBLE_EQ(y(0, 0, 1, 1), 45.0);
  EXPECT_DOUBLE_EQ(y(0, 0, 0, 0), 12.0);
}

TEST(Conv2d, MatchesSlidingWindowOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 7), ch(1, 4);
    const Shape xs{dim(rng) % 2 + 1, ch(rng), dim(rng), dim(rng)};
    const std::size_t cout = ch(rng);
    auto k = oracle::random_layer<double>("k", Shape{cout, xs.c, 3, 3}, trial % 2 == 0 ? cout : 0, rng);
    const auto x = Tensor<double>::randn(xs, rng);
    const auto got = bseg::conv2d(x, k);
    const auto want = oracle::conv2d_same_direct(x, k);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(4);
  const auto x = Tensor<double>::randn(Shape{2, 1, 5, 6}, rng);
  const auto y = bseg::conv2d(x, ones_kernel(1, 1, 1));
  EXPECT_EQ(y.vec(), x.vec());
}

TEST(Conv2d, ZeroInputGivesBias) {
  LayerParams<double> k{"k", Tensor<double>(Shape{2, 3, 3, 3}, 0.7), Tensor<double>(Shape{1, 2, 1, 1}, {0.25, -1.5}),
                        false};
  const auto y = bseg::conv2d(Tensor<double>(Shape{1, 3, 4, 4}), k);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_DOUBLE_EQ(y[i], 0.25);
    EXPECT_DOUBLE_EQ(y[16 + i], -1.5);
  }
  k.bias.reset();
  const auto z = bseg::conv2d(Tensor<double>(Shape{1, 3, 4, 4}), k);
  for (double v : z.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, ShapeErrors) {
  EXPECT_THROW(bseg::conv2d(Tensor<double>(Shape{1, 2, 4, 4}), ones_kernel(1, 3, 3)), bseg::ShapeError);
  EXPECT_THROW(bseg::conv2d(Tensor<double>(Shape{1, 3, 0, 4}), ones_kernel(1, 3, 3)), bseg::ShapeError);
}

TEST(ConvTranspose, SinglePixel) {
  Tensor<double> x(Shape{1, 1, 1, 1}, 1.0);
  const auto y = bseg::conv2d_transpose(x, ones_kernel(1, 1, 2));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(ConvTranspose, TwoByTwo) {
  Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = bseg::conv2d_transpose(x, ones_kernel(1, 1, 2));
  const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.vec(), want);
}

TEST(ConvTranspose, MatchesScatterOracleAndZeros) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 5), ch(1, 4);
    const Shape xs{dim(rng) % 2 + 1, ch(rng), dim(rng), dim(rng)};
    const std::size_t cout = ch(rng);
    auto k = oracle::random_layer<double>("k", Shape{xs.c, cout, 2, 2}, cout, rng);
    const auto x = Tensor<double>::randn(xs, rng);
    const auto got = bseg::conv2d_transpose(x, k);
    const auto want = oracle::conv_transpose_scatter(x, k, 2);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_EQ(got.shape().h, 2 * xs.h);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
  const auto z = bseg::conv2d_transpose(Tensor<double>(Shape{1, 2, 3, 3}), ones_kernel(2, 1, 2));
  for (double v : z.vec()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(bseg::conv2d_transpose(Tensor<double>(Shape{1, 3, 2, 2}), ones_kernel(2, 1, 2)), bseg::ShapeError);
}

TEST(ConvTranspose, AdjointOfStridedConv) {
  const auto r = oracle::adjoint_trials(11, 100);
  EXPECT_EQ(r.trials, 100u);
  EXPECT_LT(r.max_abs_gap, 1e-10);
}

TEST(MaxPool, Basics) {
  Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(bseg::maxpool2(x).out.vec(), std::vector<double>{4});
  const auto c = bseg::maxpool2(Tensor<double>(Shape{1, 2, 4, 6}, 2.5));
  EXPECT_EQ(c.out.shape(), (Shape{1, 2, 2, 3}));
  for (double v : c.out.vec()) EXPECT_EQ(v, 2.5);
  EXPECT_THROW(bseg::maxpool2(Tensor<double>(Shape{1, 1, 3, 4})), bseg::ShapeError);
}

TEST(MaxPool, MatchesWindowScanOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> half(1, 4), ch(1, 3);
    const auto x = Tensor<double>::randn(Shape{1, ch(rng), 2 * half(rng), 2 * half(rng)}, rng);
    EXPECT_EQ(bseg::maxpool2(x).out.vec(), oracle::maxpool_scan(x).vec());
  }
}

TEST(MaxPool, TiesRouteToFirstInRowMajorOrder) {
  Tensor<double> x(Shape{1, 1, 2, 2}, 1.0);
  const auto r = bseg::maxpool2(x);
  const auto dx = bseg::maxpool2_backward(x.shape(), r.argmax, Tensor<double>(Shape{1, 1, 1, 1}, 1.0));
  EXPECT_EQ(dx.vec(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Activations, ReluAndSigmoid) {
  Tensor<double> x(Shape{1, 1, 1, 2}, {-3, 3});
  EXPECT_EQ(bseg::relu(x).vec(), (std::vector<double>{0, 3}));
  EXPECT_DOUBLE_EQ(bseg::sigmoid(0.0), 0.5);
  const auto y = bseg::sigmoid(Tensor<double>(Shape{1, 1, 1, 1}, 0.0));
  EXPECT_DOUBLE_EQ(bseg::sigmoid_backward(y, Tensor<double>(y.shape(), 1.0))[0], 0.25);
  const double h = 1e-5;
  EXPECT_NEAR((bseg::sigmoid(h) - bseg::sigmoid(-h)) / (2 * h), 0.25, 1e-10);
}

TEST(Activations, SigmoidStaysInOpenIntervalAndFinite) {
  for (double v : {-1e4, -800.0, -40.0, 0.0, 40.0, 800.0, 1e4}) {
    const double s = bseg::sigmoid(v);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    EXPECT_TRUE(std::isfinite(s));
  }
  for (float v : {-1e4f, -100.0f, 100.0f, 1e4f}) {
    const float s = bseg::sigmoid(v);
    EXPECT_GT(s, 0.0f);
    EXPECT_LT(s, 1.0f);
  }
}

TEST(Activations, ShapePreservingOverRandomDims) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<std::size_t> d(1, 6);
    const Shape s{d(rng), d(rng), d(rng), d(rng)};
    const auto x = Tensor<double>::randn(s, rng, 10.0);
    const auto r = bseg::relu(x);
    const auto g = bseg::sigmoid(x);
    EXPECT_EQ(r.shape(), s);
    EXPECT_EQ(g.shape(), s);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r[i], std::max(x[i], 0.0));
    EXPECT_TRUE(g.all_finite());
  }
}

LayerParams<double> bn_params(std::size_t c) {
  return {"bn", Tensor<double>(Shape{1, c, 1, 1}, 1.0), Tensor<double>(Shape{1, c, 1, 1}, 0.0), false};
}

TEST(BatchNorm, ConstantChannelGivesZeros) {
  const bseg::BatchNormState<double> st(2);
  const auto y = bseg::batchnorm2d(Tensor<double>(Shape{2, 2, 3, 3}, 4.0), bn_params(2), st, bseg::Mode::Train);
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  std::mt19937_64 rng(8);
  const Shape s{2, 3, 4, 5};
  auto x = Tensor<double>::randn(s, rng, 3.0);
  for (auto& v : x.data()) v += 7.0;
  const bseg::BatchNormState<double> st(3);
  const auto y = bseg::batchnorm2d(x, bn_params(3), st, bseg::Mode::Train);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, q = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 20; ++i) m += (&y(n, c, 0, 0))[i];
    m /= 40;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 20; ++i) q += ((&y(n, c, 0, 0))[i] - m) * ((&y(n, c, 0, 0))[i] - m);
    q /= 40;
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_NEAR(q, 1.0, 1e-4);
  }
}

TEST(BatchNorm, EvalBeforeTrainingUsesInitStatistics) {
  std::mt19937_64 rng(9);
  const auto x = Tensor<double>::randn(Shape{1, 2, 3, 3}, rng);
  const bseg::BatchNormState<double> st(2);
  const auto y = bseg::batchnorm2d(x, bn_params(2), st, bseg::Mode::Eval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
  Tensor<double> x(Shape{1, 1, 1, 4}, {1, 2, 3, 6});
  bseg::BatchNormState<double> st(1);
  bseg::batchnorm2d(x, bn_params(1), st, bseg::Mode::Train, static_cast<bseg::BatchNormCache<double>*>(nullptr), &st);
  // mean 3, unbiased variance 14/3
  EXPECT_NEAR(st.running_mean[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
  EXPECT_THROW(bseg::batchnorm2d(Tensor<double>(Shape{1, 1, 1, 1}), bn_params(1), st, bseg::Mode::Train),
               bseg::ShapeError);
}

TEST(Concat, ShapesAndSplit) {
  std::mt19937_64 rng(10);
  const auto a = Tensor<double>::randn(Shape{1, 2, 4, 4}, rng);
  const auto b = Tensor<double>::randn(Shape{1, 3, 4, 4}, rng);
  const auto y = bseg::concat_channels(a, b);
  EXPECT_EQ(y.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(y(0, 1, 2, 3), a(0, 1, 2, 3));
  EXPECT_EQ(y(0, 4, 2, 3), b(0, 2, 2, 3));

  const auto same = bseg::concat_channels(a, Tensor<double>(Shape{1, 0, 4, 4}));
  EXPECT_EQ(same.vec(), a.vec());

  auto [da, db] = bseg::concat_channels_backward(a.shape(), b.shape(), Tensor<double>(y.shape(), 1.0));
  for (double v : da.vec()) EXPECT_EQ(v, 1.0);
  for (double v : db.vec()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(bseg::concat_channels(a, Tensor<double>(Shape{1, 1, 4, 5})), bseg::ShapeError);
}

TEST(GradCheck, SpecifiedShapes) {
  std::mt19937_64 rng(12);
  EXPECT_LT(oracle::check_conv2d(rng, Shape{2, 3, 5, 5}, 2).report.max_rel_error, 1e-4);
  EXPECT_LT(oracle::check_conv2d_transpose(rng, Shape{1, 2, 3, 3}, 2).report.max_rel_error, 1e-4);
  EXPECT_LT(oracle::check_sigmoid_bce(rng, Shape{1, 1, 4, 4}).report.max_rel_error, 1e-4);
  EXPECT_LT(oracle::check_batchnorm(rng, Shape{2, 3, 4, 4}).report.max_rel_error, 1e-4);
}

TEST(GradCheck, SuiteOverSeveralSeeds) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& r : oracle::gradient_suite(seed)) {
      EXPECT_GT(r.report.checked, 0u) << r.op;
      EXPECT_LT(r.report.max_rel_error, 1e-4) << r.op << " worst " << r.report.worst;
    }
  }
}

TEST(GradCheck, ReportsAMismatch) {
  std::vector<double> values{1.0, 2.0};
  std::vector<double> wrong{2.0, 4.0 + 1.0};
  auto loss = [&] { return values[0] * values[0] + values[1] * values[1]; };
  const auto r = bseg::grad_check(loss, {{"v", &values, &wrong}});
  EXPECT_EQ(r.checked, 2u);
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_EQ(r.worst, "v[1]");
}

}  // namespace

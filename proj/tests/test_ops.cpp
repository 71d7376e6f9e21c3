#include <gtest/gtest.h>

#include "movnect/ops.hpp"
#include "movnect/rng.hpp"
#include "reference_ops.hpp"

using namespace movnect;

namespace {

Tensor<double> rand_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  return refops::make_tensor(s, [&] { return rng.uniform(lo, hi); });
}

}  // namespace

TEST(Conv2d, ScalingIdentity) {
  // all-ones 3x3 input, 1x1 kernel = [2], same padding -> all twos
  Tensor<double> x = Tensor<double>::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor<double> k = Tensor<double>::full(Shape{1, 1, 1, 1}, 2.0);
  auto y = conv2d(x, k, Tensor<double>(), 1, Padding::same);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 2.0);
}

TEST(Conv2d, CenteredIdentityKernelValid) {
  Rng rng(3);
  Tensor<double> x = rand_tensor(Shape{1, 1, 6, 7}, rng);
  Tensor<double> k(Shape{1, 1, 3, 3});
  k.set({0, 0, 1, 1}, 1.0);
  auto y = conv2d(x, k, Tensor<double>(), 1, Padding::valid);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 5}));
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 5; ++c)
      EXPECT_DOUBLE_EQ(y.at({0, 0, r, c}), x.at({0, 0, r + 1, c + 1}));
}

TEST(Conv2d, MatchesReferenceOnRandomCases) {
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    const int64_t ci = 1 + rng.uniform_int(6), co = 1 + rng.uniform_int(6);
    const int64_t h = 3 + rng.uniform_int(12), w = 3 + rng.uniform_int(12);
    const int64_t kk = 1 + 2 * rng.uniform_int(2);  // 1 or 3
    const int s = 1 + static_cast<int>(rng.uniform_int(2));
    const bool same = rng.uniform() < 0.5;
    if (!same && (h < kk || w < kk)) continue;
    Tensor<double> x = rand_tensor(Shape{1, ci, h, w}, rng);
    Tensor<double> k = rand_tensor(Shape{co, ci, kk, kk}, rng);
    Tensor<double> b = rand_tensor(Shape{co}, rng);
    auto got = conv2d(x, k, b, s, same ? Padding::same : Padding::valid);
    auto want = refops::conv2d(x, k, b, s, same);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(refops::max_abs_diff(got, want), 1e-6);
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor<double> x(Shape{1, 3, 4, 4});
  Tensor<double> k(Shape{2, 4, 1, 1});
  try {
    conv2d(x, k, Tensor<double>(), 1, Padding::same);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("1x3x4x4"), std::string::npos);  // diagnostic names both shapes
    EXPECT_NE(msg.find("2x4x1x1"), std::string::npos);
  }
}

TEST(Depthwise, ZeroKernelGivesZero) {
  Rng rng(4);
  Tensor<double> x = rand_tensor(Shape{1, 4, 5, 5}, rng);
  Tensor<double> k(Shape{4, 1, 3, 3});
  auto y = depthwise_conv2d(x, k, Tensor<double>(), 1, Padding::same);
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 0.0);
}

TEST(Depthwise, ChannelIndependence) {
  Rng rng(5);
  Tensor<double> x(Shape{1, 2, 6, 6});
  double* p = x.mut();
  for (int64_t i = 0; i < 36; ++i) p[i] = rng.uniform(-2, 2);  // channel 0 random, channel 1 zero
  Tensor<double> k = rand_tensor(Shape{2, 1, 3, 3}, rng);
  Tensor<double> b(Shape{2});
  b.set({1}, 0.75);
  auto y = depthwise_conv2d(x, k, b, 1, Padding::same);
  for (int64_t r = 0; r < 6; ++r)
    for (int64_t c = 0; c < 6; ++c)
      EXPECT_DOUBLE_EQ(y.at({0, 1, r, c}), 0.75);  // bias only, regardless of channel 0
}

TEST(Depthwise, MatchesReference) {
  Rng rng(6);
  Tensor<double> x = rand_tensor(Shape{1, 8, 16, 16}, rng);
  Tensor<double> k = rand_tensor(Shape{8, 1, 3, 3}, rng);
  Tensor<double> b = rand_tensor(Shape{8}, rng);
  for (int s : {1, 2}) {
    auto got = depthwise_conv2d(x, k, b, s, Padding::same);
    auto want = refops::depthwise(x, k, b, s, true);
    EXPECT_LT(refops::max_abs_diff(got, want), 1e-6);
  }
  EXPECT_THROW(depthwise_conv2d(x, rand_tensor(Shape{4, 1, 3, 3}, rng), Tensor<double>(), 1,
                                Padding::same),
               std::invalid_argument);
}

TEST(Pointwise, IdentityMixing) {
  Rng rng(7);
  Tensor<double> x = rand_tensor(Shape{1, 3, 4, 4}, rng);
  Tensor<double> k(Shape{3, 3, 1, 1});
  for (int64_t i = 0; i < 3; ++i) k.set({i, i, 0, 0}, 1.0);
  auto y = pointwise_conv2d(x, k, Tensor<double>());
  EXPECT_LT(refops::max_abs_diff(y, x), 1e-15);
}

TEST(Pointwise, AgreesWithConv2dAndMatrixOracle) {
  Rng rng(8);
  Tensor<double> x = rand_tensor(Shape{1, 5, 6, 6}, rng);
  Tensor<double> k = rand_tensor(Shape{7, 5, 1, 1}, rng);
  Tensor<double> b = rand_tensor(Shape{7}, rng);
  auto y = pointwise_conv2d(x, k, b);
  auto via_conv = conv2d(x, k, b, 1, Padding::same);
  EXPECT_LT(refops::max_abs_diff(y, via_conv), 1e-12);
  // per-pixel matrix multiply
  for (int64_t r = 0; r < 6; ++r)
    for (int64_t c = 0; c < 6; ++c)
      for (int64_t o = 0; o < 7; ++o) {
        double acc = b.at({o});
        for (int64_t i = 0; i < 5; ++i) acc += k.at({o, i, 0, 0}) * x.at({0, i, r, c});
        EXPECT_NEAR(y.at({0, o, r, c}), acc, 1e-9);
      }
  EXPECT_THROW(pointwise_conv2d(x, rand_tensor(Shape{7, 5, 3, 3}, rng), b),
               std::invalid_argument);
}

TEST(Transposed, Stride1PointKernelScales) {
  Rng rng(9);
  Tensor<double> x = rand_tensor(Shape{1, 2, 4, 4}, rng);
  Tensor<double> k(Shape{2, 2, 1, 1});
  k.set({0, 0, 0, 0}, 1.5);
  k.set({1, 1, 0, 0}, 1.5);
  auto y = transposed_conv2d(x, k, 1);
  for (int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], 1.5 * x.data()[i], 1e-12);
}

TEST(Transposed, AdjointIdentity) {
  Rng rng(10);
  for (int it = 0; it < 8; ++it) {
    const int64_t ci = 1 + rng.uniform_int(4), co = 1 + rng.uniform_int(4);
    const int s = 1 + static_cast<int>(rng.uniform_int(2));
    const int64_t oh = 2 + rng.uniform_int(5), ow = 2 + rng.uniform_int(5);
    const int64_t h = oh * s, w = ow * s;
    const int64_t kk = 1 + rng.uniform_int(4);
    Tensor<double> x = rand_tensor(Shape{1, ci, h, w}, rng);
    Tensor<double> kern = rand_tensor(Shape{co, ci, kk, kk}, rng);
    Tensor<double> y = rand_tensor(Shape{1, co, oh, ow}, rng);
    auto fwd = conv2d(x, kern, Tensor<double>(), s, Padding::same);
    ASSERT_EQ(fwd.shape(), y.shape());
    auto adj = transposed_conv2d(y, kern, s);
    ASSERT_EQ(adj.shape(), x.shape());
    EXPECT_NEAR(refops::inner(fwd, y), refops::inner(x, adj), 1e-8);
  }
}

TEST(Transposed, Stride2UpsamplingMatchesScatterReference) {
  Rng rng(12);
  Tensor<double> x = rand_tensor(Shape{1, 3, 4, 4}, rng);
  Tensor<double> k = rand_tensor(Shape{3, 2, 4, 4}, rng);
  auto got = transposed_conv2d(x, k, 2);
  ASSERT_EQ(got.shape(), (Shape{1, 2, 8, 8}));
  auto want = refops::transposed(x, k, 2);
  EXPECT_LT(refops::max_abs_diff(got, want), 1e-6);
}

TEST(Bilinear, IdentityAndConstant) {
  Rng rng(13);
  Tensor<double> x = rand_tensor(Shape{1, 2, 5, 7}, rng);
  auto same = bilinear_resize(x, 5, 7);
  EXPECT_LT(refops::max_abs_diff(same, x), 1e-15);
  Tensor<double> c = Tensor<double>::full(Shape{1, 1, 4, 4}, 3.25);
  auto up = bilinear_resize(c, 9, 11);
  for (int64_t i = 0; i < up.numel(); ++i) EXPECT_DOUBLE_EQ(up.data()[i], 3.25);
}

TEST(Bilinear, HandComputed2x2To3x3) {
  Tensor<double> x(Shape{1, 1, 2, 2}, {0, 1, 2, 3});
  auto y = bilinear_resize(x, 3, 3);
  const double want[9] = {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
  for (int64_t i = 0; i < 9; ++i) EXPECT_NEAR(y.data()[i], want[i], 1e-12);
}

TEST(Batchnorm, IdentityAndConstantBeta) {
  Rng rng(14);
  Tensor<double> x = rand_tensor(Shape{1, 3, 4, 4}, rng);
  Tensor<double> zeros(Shape{3}), ones = Tensor<double>::full(Shape{3}, 1.0);
  auto y = batchnorm(x, zeros, ones, ones, zeros, 0.0);
  EXPECT_LT(refops::max_abs_diff(y, x), 1e-12);
  Tensor<double> beta(Shape{3}, {1, 2, 3});
  auto z = batchnorm(x, zeros, ones, zeros, beta, 0.0);  // gamma 0 -> constant beta
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 16; ++i)
      EXPECT_DOUBLE_EQ(z.data()[c * 16 + i], static_cast<double>(c + 1));
  EXPECT_THROW(batchnorm(x, zeros, Tensor<double>::full(Shape{3}, -1.0), ones, zeros, 0.5),
               std::invalid_argument);
}

TEST(Batchnorm, FoldMatchesUnfolded) {
  Rng rng(15);
  Tensor<double> x = rand_tensor(Shape{1, 4, 6, 6}, rng);
  Tensor<double> k = rand_tensor(Shape{5, 4, 3, 3}, rng);
  Tensor<double> mean = rand_tensor(Shape{5}, rng);
  Tensor<double> var = refops::make_tensor(Shape{5}, [&] { return rng.uniform(0.2, 2.0); });
  Tensor<double> gamma = rand_tensor(Shape{5}, rng);
  Tensor<double> beta = rand_tensor(Shape{5}, rng);
  auto unfolded = batchnorm(conv2d(x, k, Tensor<double>(), 1, Padding::same), mean, var, gamma,
                            beta, 1e-5);
  Tensor<double> fk = k, fb;
  fold_batchnorm(fk, fb, mean, var, gamma, beta, 1e-5);
  auto folded = conv2d(x, fk, fb, 1, Padding::same);
  EXPECT_LT(refops::max_abs_diff(unfolded, folded), 1e-5);
}

TEST(Activation, Trivials) {
  Tensor<double> x(Shape{1, 1, 1, 3}, {-1, 0, 2});
  auto r = activation(x, Act::relu);
  EXPECT_DOUBLE_EQ(r.data()[0], 0);
  EXPECT_DOUBLE_EQ(r.data()[1], 0);
  EXPECT_DOUBLE_EQ(r.data()[2], 2);
  Tensor<double> s(Shape{1, 1, 1, 1}, {7});
  EXPECT_DOUBLE_EQ(activation(s, Act::relu6).data()[0], 6);
  Rng rng(16);
  Tensor<double> z = rand_tensor(Shape{1, 2, 3, 3}, rng);
  auto lin = activation(z, Act::linear);
  for (int64_t i = 0; i < z.numel(); ++i) EXPECT_EQ(lin.data()[i], z.data()[i]);
}

TEST(Concat, RoundTripAndErrors) {
  Rng rng(17);
  Tensor<double> a = rand_tensor(Shape{1, 3, 4, 4}, rng);
  Tensor<double> b = rand_tensor(Shape{1, 5, 4, 4}, rng);
  std::vector<Tensor<double>> xs{a, b};
  auto cat = concat_channels(std::span<const Tensor<double>>(xs));
  EXPECT_EQ(cat.dim(1), 8);
  auto a2 = slice_channels(cat, 0, 3);
  auto b2 = slice_channels(cat, 3, 8);
  EXPECT_EQ(refops::max_abs_diff(a2, a), 0.0);  // bit-identical
  EXPECT_EQ(refops::max_abs_diff(b2, b), 0.0);
  std::vector<Tensor<double>> one{a};
  EXPECT_EQ(refops::max_abs_diff(concat_channels(std::span<const Tensor<double>>(one)), a), 0.0);
  Tensor<double> bad(Shape{1, 2, 5, 4});
  std::vector<Tensor<double>> mism{a, bad};
  EXPECT_THROW(concat_channels(std::span<const Tensor<double>>(mism)), std::invalid_argument);
}

TEST(Precision, SingleDoubleAgreement) {
  Rng rng(18);
  Tensor<double> x = rand_tensor(Shape{1, 4, 8, 8}, rng);
  Tensor<double> k = rand_tensor(Shape{6, 4, 3, 3}, rng, -0.5, 0.5);
  Tensor<double> b = rand_tensor(Shape{6}, rng);
  auto yd = conv2d(x, k, b, 1, Padding::same);
  auto yf = conv2d(x.cast<float>(), k.cast<float>(), b.cast<float>(), 1, Padding::same);
  auto yfd = yf.cast<double>();
  for (int64_t i = 0; i < yd.numel(); ++i) {
    const double denom = std::max(1.0, std::abs(yd.data()[i]));
    EXPECT_LT(std::abs(yd.data()[i] - yfd.data()[i]) / denom, 1e-3);
  }
}

TEST(Parallelism, ResultIndependentOfThreadCap) {
  Rng rng(19);
  Tensor<double> x = rand_tensor(Shape{1, 8, 16, 16}, rng);
  Tensor<double> k = rand_tensor(Shape{16, 8, 3, 3}, rng);
  set_max_threads(1);
  auto serial = conv2d(x, k, Tensor<double>(), 1, Padding::same);
  set_max_threads(0);  // pool default
  auto parallel = conv2d(x, k, Tensor<double>(), 1, Padding::same);
  EXPECT_EQ(refops::max_abs_diff(serial, parallel), 0.0);
}

#include <gtest/gtest.h>

#include <functional>

#include "movnect/rng.hpp"
#include "movnect/tape.hpp"
#include "reference_ops.hpp"

using namespace movnect;

namespace {

Tensor<double> rand_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  return refops::make_tensor(s, [&] { return rng.uniform(lo, hi); });
}

double tsum(const Tensor<double>& t) {
  double s = 0;
  for (int64_t i = 0; i < t.numel(); ++i) s += t.data()[i];
  return s;
}

// Central finite differences of scalar_fn against the analytic gradient.
double max_rel_error(const Tensor<double>& analytic, Tensor<double> point,
                     const std::function<double(const Tensor<double>&)>& scalar_fn,
                     int probes, Rng& rng, double h = 1e-5) {
  double worst = 0;
  for (int p = 0; p < probes; ++p) {
    const int64_t i = rng.uniform_int(point.numel());
    Tensor<double> hi = point, lo = point;
    hi.mut()[i] += h;
    lo.mut()[i] -= h;
    const double fd = (scalar_fn(hi) - scalar_fn(lo)) / (2 * h);
    const double an = analytic.data()[i];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

}  // namespace

TEST(Tape, SumGradientIsOnes) {
  Rng rng(1);
  Tape tape;
  Var x = tape.param(rand_tensor(Shape{1, 2, 3, 3}, rng));
  // loss = sum(x): seed backward with ones through the identity activation
  Var y = tape.activation(x, Act::linear);
  tape.backward(y, Tensor<double>::full(x.value.shape(), 1.0));
  Tensor<double> g = tape.grad(x);
  for (int64_t i = 0; i < g.numel(); ++i) EXPECT_DOUBLE_EQ(g.data()[i], 1.0);
}

TEST(Tape, ReplayTwiceRejected) {
  Tape tape;
  Var x = tape.param(Tensor<double>::full(Shape{1, 1, 2, 2}, 1.0));
  Var y = tape.abs_elem(x);
  tape.backward(y, Tensor<double>::full(y.value.shape(), 1.0));
  EXPECT_THROW(tape.backward(y, Tensor<double>::full(y.value.shape(), 1.0)), std::logic_error);
}

TEST(Tape, ConvChainMatchesFiniteDifferences) {
  Rng rng(2);
  const Tensor<double> x0 = rand_tensor(Shape{1, 3, 8, 8}, rng);
  const Tensor<double> k1 = rand_tensor(Shape{4, 3, 3, 3}, rng, -0.5, 0.5);
  const Tensor<double> k2 = rand_tensor(Shape{4, 1, 3, 3}, rng, -0.5, 0.5);
  const Tensor<double> k3 = rand_tensor(Shape{2, 4, 1, 1}, rng, -0.5, 0.5);
  const Tensor<double> b1 = rand_tensor(Shape{4}, rng);

  Tape tape;
  Var vx = tape.param(x0);
  Var v1 = tape.param(k1), v2 = tape.param(k2), v3 = tape.param(k3), vb = tape.param(b1);
  Var y = tape.conv2d(vx, v1, vb, 2, Padding::same);
  y = tape.activation(y, Act::relu6);
  y = tape.depthwise_conv2d(y, v2, Var{}, 1, Padding::same);
  y = tape.activation(y, Act::relu);
  y = tape.pointwise_conv2d(y, v3, Var{});
  y = tape.bilinear_resize(y, 8, 8);
  tape.backward(y, Tensor<double>::full(y.value.shape(), 1.0));

  auto fd_check = [&](const Tensor<double>& analytic, const Tensor<double>& point, int which) {
    auto fn = [&](const Tensor<double>& probe) {
      const Tensor<double>& kk1 = which == 0 ? probe : k1;
      const Tensor<double>& kk2 = which == 1 ? probe : k2;
      const Tensor<double>& kk3 = which == 2 ? probe : k3;
      const Tensor<double>& bb1 = which == 3 ? probe : b1;
      const Tensor<double>& xx = which == 4 ? probe : x0;
      auto z = conv2d(xx, kk1, bb1, 2, Padding::same);
      z = activation(z, Act::relu6);
      z = depthwise_conv2d(z, kk2, Tensor<double>(), 1, Padding::same);
      z = activation(z, Act::relu);
      z = pointwise_conv2d(z, kk3, Tensor<double>());
      z = bilinear_resize(z, 8, 8);
      return tsum(z);
    };
    Rng prng(100 + which);
    EXPECT_LT(max_rel_error(analytic, point, fn, 12, prng), 1e-4) << "input " << which;
  };
  fd_check(tape.grad(v1), k1, 0);
  fd_check(tape.grad(v2), k2, 1);
  fd_check(tape.grad(v3), k3, 2);
  fd_check(tape.grad(vb), b1, 3);
  fd_check(tape.grad(vx), x0, 4);
}

TEST(Tape, TransposedBatchnormConcatGradients) {
  Rng rng(3);
  const Tensor<double> x0 = rand_tensor(Shape{1, 3, 4, 4}, rng);
  const Tensor<double> kt = rand_tensor(Shape{3, 2, 4, 4}, rng, -0.5, 0.5);
  const Tensor<double> gamma = rand_tensor(Shape{2}, rng, 0.5, 1.5);
  const Tensor<double> beta = rand_tensor(Shape{2}, rng);
  const Tensor<double> mean = rand_tensor(Shape{2}, rng);
  const Tensor<double> var = refops::make_tensor(Shape{2}, [&] { return rng.uniform(0.5, 2.0); });

  auto eval = [&](const Tensor<double>& xx, const Tensor<double>& kk, const Tensor<double>& gg,
                  const Tensor<double>& bb) {
    auto y = transposed_conv2d(xx, kk, 2);
    y = batchnorm(y, mean, var, gg, bb, 1e-5);
    std::vector<Tensor<double>> xs{y, abs_elem(y)};
    auto cat = concat_channels(std::span<const Tensor<double>>(xs));
    auto s = slice_channels(cat, 1, 3);
    return tsum(s);
  };

  Tape tape;
  Var vx = tape.param(x0), vk = tape.param(kt), vg = tape.param(gamma), vb = tape.param(beta);
  Var y = tape.transposed_conv2d(vx, vk, 2);
  y = tape.batchnorm(y, Tape::constant(mean), Tape::constant(var), vg, vb, 1e-5);
  Var cat = tape.concat_channels({y, tape.abs_elem(y)});
  Var s = tape.slice_channels(cat, 1, 3);
  tape.backward(s, Tensor<double>::full(s.value.shape(), 1.0));

  Rng prng(42);
  auto fx = [&](const Tensor<double>& p) { return eval(p, kt, gamma, beta); };
  auto fk = [&](const Tensor<double>& p) { return eval(x0, p, gamma, beta); };
  auto fg = [&](const Tensor<double>& p) { return eval(x0, kt, p, beta); };
  auto fb = [&](const Tensor<double>& p) { return eval(x0, kt, gamma, p); };
  EXPECT_LT(max_rel_error(tape.grad(vx), x0, fx, 10, prng), 1e-4);
  EXPECT_LT(max_rel_error(tape.grad(vk), kt, fk, 10, prng), 1e-4);
  EXPECT_LT(max_rel_error(tape.grad(vg), gamma, fg, 6, prng), 1e-4);
  EXPECT_LT(max_rel_error(tape.grad(vb), beta, fb, 6, prng), 1e-4);
}

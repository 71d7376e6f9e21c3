#include <gtest/gtest.h>

#include "movnect/losses.hpp"
#include "movnect/rng.hpp"
#include "reference_ops.hpp"

using namespace movnect;

namespace {

Tensor<double> rand_maps(Shape s, uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  return refops::make_tensor(s, [&] { return rng.uniform(lo, hi); });
}

}  // namespace

TEST(HeatmapLoss, ZeroResidualIsExactlyZero) {
  auto h = rand_maps(Shape{4, 5, 5}, 1);
  EXPECT_EQ(heatmap_loss(h, h, h, 0.5), 0.0);
}

TEST(HeatmapLoss, AlphaOneIgnoresTeacher) {
  auto h = rand_maps(Shape{3, 6, 6}, 2);
  auto gt = rand_maps(Shape{3, 6, 6}, 3);
  auto t1 = rand_maps(Shape{3, 6, 6}, 4);
  auto t2 = rand_maps(Shape{3, 6, 6}, 5);
  EXPECT_EQ(heatmap_loss(h, gt, t1, 1.0), heatmap_loss(h, gt, t2, 1.0));
  EXPECT_EQ(heatmap_loss(h, gt, Tensor<double>(), 1.0), heatmap_loss(h, gt, t1, 1.0));
}

TEST(HeatmapLoss, HandComputedCase) {
  // J = 1, 1x2 maps: H = (1,0), Hgt = (0,0), Ht = (1,0), alpha = 0.5
  Tensor<double> h(Shape{1, 1, 2}, {1, 0});
  Tensor<double> gt(Shape{1, 1, 2}, {0, 0});
  Tensor<double> t(Shape{1, 1, 2}, {1, 0});
  EXPECT_NEAR(heatmap_loss(h, gt, t, 0.5), 0.5 * std::sqrt(2.0), 1e-12);
}

TEST(HeatmapLoss, HomogeneousDegreeOne) {
  const Shape s{5, 4, 4};
  auto gt = rand_maps(s, 6);
  auto r = rand_maps(s, 7);   // gt residual
  auto q = rand_maps(s, 8);   // teacher residual
  auto build = [&](double t) {
    Tensor<double> pred(s), teacher(s);
    double* pp = pred.mut();
    double* tp = teacher.mut();
    for (int64_t i = 0; i < s.numel(); ++i) {
      pp[i] = gt.data()[i] + t * r.data()[i];
      tp[i] = pp[i] - t * q.data()[i];
    }
    return std::pair{pred, teacher};
  };
  auto [p1, t1] = build(1.0);
  const double base = heatmap_loss(p1, gt, t1, 0.5);
  for (double t : {0.0, 0.25, 3.0, 7.5}) {
    auto [pt, tt] = build(t);
    EXPECT_NEAR(heatmap_loss(pt, gt, tt, 0.5), t * base, 1e-12 * std::max(1.0, t * base));
  }
}

TEST(LocmapLoss, ZeroAndMaskAnnihilation) {
  LocMaps l{rand_maps(Shape{3, 4, 4}, 10), rand_maps(Shape{3, 4, 4}, 11),
            rand_maps(Shape{3, 4, 4}, 12)};
  auto mask = rand_maps(Shape{3, 4, 4}, 13, 0, 1);
  EXPECT_EQ(locmap_loss(l, l, &l, mask, 0.5), 0.0);
  LocMaps gt{rand_maps(Shape{3, 4, 4}, 14), rand_maps(Shape{3, 4, 4}, 15),
             rand_maps(Shape{3, 4, 4}, 16)};
  Tensor<double> zero_mask(Shape{3, 4, 4});
  EXPECT_EQ(locmap_loss(l, gt, &l, zero_mask, 0.5), 0.0);  // Hadamard annihilation
}

TEST(LocmapLoss, HandComputedSinglePixel) {
  // one joint, one pixel, Hgt = 1, L - Lgt = 3, L - Lt = 4, alpha 0.5 -> 3.5
  Tensor<double> one(Shape{1, 1, 1}, {1});
  LocMaps pred{Tensor<double>(Shape{1, 1, 1}, {3}), Tensor<double>(Shape{1, 1, 1}),
               Tensor<double>(Shape{1, 1, 1})};
  LocMaps gt{Tensor<double>(Shape{1, 1, 1}), Tensor<double>(Shape{1, 1, 1}),
             Tensor<double>(Shape{1, 1, 1})};
  LocMaps teach{Tensor<double>(Shape{1, 1, 1}, {-1}), Tensor<double>(Shape{1, 1, 1}),
                Tensor<double>(Shape{1, 1, 1})};
  EXPECT_NEAR(locmap_loss(pred, gt, &teach, one, 0.5), 0.5 * 3 + 0.5 * 4, 1e-12);
}

TEST(LocmapLoss, AlphaZeroIgnoresGtResiduals) {
  LocMaps pred{rand_maps(Shape{2, 3, 3}, 20), rand_maps(Shape{2, 3, 3}, 21),
               rand_maps(Shape{2, 3, 3}, 22)};
  LocMaps teach{rand_maps(Shape{2, 3, 3}, 23), rand_maps(Shape{2, 3, 3}, 24),
                rand_maps(Shape{2, 3, 3}, 25)};
  LocMaps gt1{rand_maps(Shape{2, 3, 3}, 26), rand_maps(Shape{2, 3, 3}, 27),
              rand_maps(Shape{2, 3, 3}, 28)};
  LocMaps gt2{rand_maps(Shape{2, 3, 3}, 29), rand_maps(Shape{2, 3, 3}, 30),
              rand_maps(Shape{2, 3, 3}, 31)};
  auto mask = rand_maps(Shape{2, 3, 3}, 32, 0, 1);
  EXPECT_EQ(locmap_loss(pred, gt1, &teach, mask, 0.0), locmap_loss(pred, gt2, &teach, mask, 0.0));
}

TEST(LossGradients, MatchFiniteDifferencesThroughMask) {
  const Shape s{3, 5, 5};
  auto pred = rand_maps(s, 40);
  auto gt = rand_maps(s, 41);
  auto teach = rand_maps(s, 42);
  auto gh = heatmap_loss_grad(pred, gt, teach, 0.5);
  Rng rng(43);
  const double h = 1e-6;
  for (int probe = 0; probe < 30; ++probe) {
    const int64_t i = rng.uniform_int(pred.numel());
    Tensor<double> hi = pred, lo = pred;
    hi.mut()[i] += h;
    lo.mut()[i] -= h;
    const double fd = (heatmap_loss(hi, gt, teach, 0.5) - heatmap_loss(lo, gt, teach, 0.5)) /
                      (2 * h);
    EXPECT_NEAR(gh.data()[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
  // location-map gradient through the Hadamard mask (some mask zeros)
  LocMaps lp{rand_maps(s, 44, 0, 200), rand_maps(s, 45, -200, 0), rand_maps(s, 46, -50, 50)};
  LocMaps lg{rand_maps(s, 47, 0, 200), rand_maps(s, 48, -200, 0), rand_maps(s, 49, -50, 50)};
  LocMaps lt{rand_maps(s, 50, 0, 200), rand_maps(s, 51, -200, 0), rand_maps(s, 52, -50, 50)};
  Rng mrng(53);
  auto mask = refops::make_tensor(s, [&] { return mrng.uniform() < 0.3 ? 0.0 : mrng.uniform(); });
  auto gx = locmap_loss_grad_family(lp.x, lg.x, &lt.x, mask, 0.5);
  for (int probe = 0; probe < 30; ++probe) {
    const int64_t i = mrng.uniform_int(lp.x.numel());
    LocMaps hi = lp, lo = lp;
    hi.x.mut()[i] += h;
    lo.x.mut()[i] -= h;
    const double fd =
        (locmap_loss(hi, lg, &lt, mask, 0.5) - locmap_loss(lo, lg, &lt, mask, 0.5)) / (2 * h);
    EXPECT_NEAR(gx.data()[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Mpjpe, TrivialAndBruteForce) {
  Tensor<double> a(Shape{2, 3}, {0, 0, 0, 10, 20, 30});
  EXPECT_EQ(mpjpe(a, a), 0.0);
  Tensor<double> b = a;
  double* bp = b.mut();
  for (int j = 0; j < 2; ++j) bp[j * 3] += 10;  // uniform 10 mm x offset
  EXPECT_NEAR(mpjpe(b, a), 10.0, 1e-12);
  Rng rng(60);
  Tensor<double> p = refops::make_tensor(Shape{15, 3}, [&] { return rng.uniform(-500, 500); });
  Tensor<double> q = refops::make_tensor(Shape{15, 3}, [&] { return rng.uniform(-500, 500); });
  double want = 0;
  for (int j = 0; j < 15; ++j) {
    double d2 = 0;
    for (int a2 = 0; a2 < 3; ++a2) {
      const double d = p.at({j, a2}) - q.at({j, a2});
      d2 += d * d;
    }
    want += std::sqrt(d2);
  }
  want /= 15;
  EXPECT_NEAR(mpjpe(p, q), want, 1e-9);
  EXPECT_THROW(mpjpe(p, Tensor<double>(Shape{14, 3})), std::invalid_argument);
}

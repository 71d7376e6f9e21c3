#include <gtest/gtest.h>

#include "movnect/targets.hpp"

using namespace movnect;

TEST(GtHeatmap, PeakCellIsOne) {
  // keypoint exactly at the centre of cell (4, 7): crop px (60, 36), stride 8
  auto h = make_gt_heatmap(60, 36, 16, 16, 2.0, 8);
  EXPECT_TRUE(h.visible);
  EXPECT_DOUBLE_EQ(h.map.at({4, 7}), 1.0);
  double peak = 0;
  for (int64_t i = 0; i < h.map.numel(); ++i) peak = std::max(peak, h.map.data()[i]);
  EXPECT_DOUBLE_EQ(peak, 1.0);
}

TEST(GtHeatmap, GaussianFalloffAtSigma) {
  auto h = make_gt_heatmap(60, 36, 16, 16, 2.0, 8);
  // two cells from the peak along x = distance sigma
  EXPECT_NEAR(h.map.at({4, 9}), std::exp(-0.5), 1e-12);
}

TEST(GtHeatmap, MaxIsExactlyOneForFractionalCentres) {
  auto h = make_gt_heatmap(61.7, 37.3, 16, 16, 2.0, 8);
  double peak = 0;
  for (int64_t i = 0; i < h.map.numel(); ++i) peak = std::max(peak, h.map.data()[i]);
  EXPECT_DOUBLE_EQ(peak, 1.0);  // renormalised: unique maximum equals 1
}

TEST(GtHeatmap, SumGrowsWithSigma) {
  double prev = 0;
  for (double sigma : {1.0, 1.5, 2.0, 3.0, 4.0}) {
    auto h = make_gt_heatmap(64, 64, 16, 16, sigma, 8);
    double sum = 0;
    for (int64_t i = 0; i < h.map.numel(); ++i) sum += h.map.data()[i];
    EXPECT_GT(sum, prev);
    prev = sum;
  }
}

TEST(GtHeatmap, OutsideCropIsZeroAndFlagged) {
  auto h = make_gt_heatmap(-4, 30, 16, 16, 2.0, 8);
  EXPECT_FALSE(h.visible);
  for (int64_t i = 0; i < h.map.numel(); ++i) EXPECT_EQ(h.map.data()[i], 0.0);
}

TEST(GtLocmaps, ConstantsPerJointRootZero) {
  Tensor<double> pose(Shape{3, 3}, {0, 0, 0, 100, -50, 30, -7, 8, 9});
  auto maps = make_gt_locmaps(pose, 4, 4);
  for (int64_t i = 0; i < 16; ++i) {
    EXPECT_EQ(maps[0].data()[i], 0.0);  // root maps all-zero
    EXPECT_EQ(maps[1].data()[i], 0.0);
    EXPECT_EQ(maps[2].data()[i], 0.0);
  }
  for (int64_t i = 0; i < 16; ++i) {
    EXPECT_EQ(maps[0].data()[16 + i], 100.0);
    EXPECT_EQ(maps[1].data()[16 + i], -50.0);
    EXPECT_EQ(maps[2].data()[16 + i], 30.0);
  }
  EXPECT_THROW(make_gt_locmaps(Tensor<double>(Shape{3, 2}), 4, 4), std::invalid_argument);
}

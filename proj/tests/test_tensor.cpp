#include <gtest/gtest.h>

#include "movnect/rng.hpp"
#include "movnect/tensor.hpp"

using movnect::Rng;
using movnect::Shape;
using movnect::Tensor;

TEST(Shape, InvariantsAndHelpers) {
  Shape s{1, 3, 4, 5};
  EXPECT_EQ(s.rank(), 4);
  EXPECT_EQ(s.numel(), 60);
  EXPECT_EQ(s.str(), "1x3x4x5");
  EXPECT_THROW(Shape({2, 0}), std::invalid_argument);   // extents >= 1
  EXPECT_THROW(Shape({1, 1, 1, 1, 1}), std::invalid_argument);  // rank <= 4
}

TEST(Tensor, BufferMatchesShape) {
  Tensor<double> t(Shape{2, 3});
  EXPECT_EQ(t.numel(), t.shape().numel());
  EXPECT_THROW(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), std::invalid_argument);
}

TEST(Tensor, CopyOnWriteKeepsValuesIndependent) {
  Tensor<double> a(Shape{2, 2});
  a.set({0, 0}, 1.0);
  Tensor<double> b = a;  // shared buffer
  b.set({0, 0}, 7.0);
  EXPECT_DOUBLE_EQ(a.at({0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(b.at({0, 0}), 7.0);
}

TEST(Tensor, CastRoundTrip) {
  Rng rng(5);
  Tensor<double> a(Shape{3, 3});
  double* p = a.mut();
  for (int i = 0; i < 9; ++i) p[i] = rng.uniform(-1, 1);
  Tensor<float> f = a.cast<float>();
  Tensor<double> back = f.cast<double>();
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(back.data()[i], a.data()[i], 1e-7);
}

TEST(Rng, NamedStreamsAreStableAndDistinct) {
  Rng a = Rng::named(7, "layer.kernel");
  Rng a2 = Rng::named(7, "layer.kernel");
  Rng b = Rng::named(7, "other.kernel");
  EXPECT_EQ(a.next_u64(), a2.next_u64());
  Rng a3 = Rng::named(7, "layer.kernel");
  EXPECT_NE(a3.next_u64(), b.next_u64());
}

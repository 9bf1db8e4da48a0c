#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace pclf;

TEST(Box, EncodeDecodeRoundTrip) {
  oracle::Gen g(11);
  for (int t = 0; t < 200; ++t) {
    const Box a = g.int_box(64), b = g.int_box(64);
    const Box r = decode_box(a, encode_box(a, b));
    EXPECT_NEAR(r.x1, b.x1, 1e-9);
    EXPECT_NEAR(r.y1, b.y1, 1e-9);
    EXPECT_NEAR(r.x2, b.x2, 1e-9);
    EXPECT_NEAR(r.y2, b.y2, 1e-9);
  }
}

TEST(Box, ZeroDeltasAreIdentity) {
  const Box a{3, 4, 11, 20};
  EXPECT_EQ(decode_box(a, {0, 0, 0, 0}), a);
}

TEST(Box, IouSymmetricAndBounded) {
  oracle::Gen g(12);
  for (int t = 0; t < 200; ++t) {
    const Box a = g.int_box(20), b = g.int_box(20);
    const double v = box_iou(a, b);
    EXPECT_DOUBLE_EQ(v, box_iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Box, ClipAndFlip) {
  EXPECT_EQ(clip_box({-3, 2, 70, 80}, 64, 64), (Box{0, 2, 64, 64}));
  EXPECT_EQ(flip_box_horizontal({2, 1, 10, 5}, 64), (Box{54, 1, 62, 5}));
  oracle::Gen g(13);
  for (int t = 0; t < 50; ++t) {
    const Box b = g.int_box(64);
    EXPECT_EQ(flip_box_horizontal(flip_box_horizontal(b, 64), 64), b);
  }
}

TEST(Rng, HashSeedDeterministicAndSpread) {
  EXPECT_EQ(hash_seed(1, 2), hash_seed(1, 2));
  EXPECT_NE(hash_seed(1, 2), hash_seed(2, 1));
  EXPECT_NE(hash_seed(0, 0, 1), hash_seed(0, 0, 2));
  EXPECT_EQ(hash_name("a"), hash_name("a"));
  EXPECT_NE(hash_name("a"), hash_name("b"));
}

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  t.at(1, 2, 3, 4) = 7;
  EXPECT_EQ(t[119], 7);
  EXPECT_EQ(t.slice(1)[59], 7);
  t.reshape({6, 20});
  EXPECT_EQ(t.at(5, 19), 7);
  EXPECT_THROW(t.reshape({7, 20}), InvalidArgument);
  const auto d = t.cast<double>();
  EXPECT_EQ(d[119], 7.0);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"

using namespace pclf;
using namespace pclf::pcl;

namespace {

using Rows = std::vector<std::vector<double>>;

Tensor<double> to_tensor(const Rows& rows) {
  Tensor<double> t({int(rows.size()), int(rows[0].size())});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) t.at(int(i), int(k)) = rows[i][k];
  return t;
}

Rows random_rows(oracle::Gen& g, int n, int p) {
  Rows r;
  for (int i = 0; i < n; ++i) r.push_back(g.vec(p));
  return r;
}

Partition random_partition(oracle::Gen& g, int n) {
  Partition p;
  for (int i = 0; i < n; ++i) (g.coin(0.4) ? p.tampered : p.authentic).push_back(i);
  return p;
}

}  // namespace

TEST(Assign, SupervisedStrictThreshold) {
  const std::vector<Box> gt{{0, 0, 8, 8}};
  // IoU exactly 1/7 and exactly 0.5 fall on the authentic side.
  const std::vector<Box> props{{0, 0, 8, 8}, {20, 20, 28, 28}, {0, 0, 8, 2}, {0, 0, 8, 4}, {0, 0, 8, 6}};
  const auto p = assign_supervised(props, gt, 0.5);
  EXPECT_EQ(p.tampered, (std::vector<int>{0, 4}));
  EXPECT_EQ(p.authentic, (std::vector<int>{1, 2, 3}));
  EXPECT_DOUBLE_EQ(metrics::iou(props[2], gt[0]), 0.25);
  EXPECT_NEAR(oracle::iou_cells({0, 0, 4, 2}, {3, 0, 7, 2}), 1.0 / 7.0, 1e-15);
  EXPECT_TRUE(assign_supervised(std::vector<Box>{{3, 0, 7, 2}}, std::vector<Box>{{0, 0, 4, 2}}, 0.5).tampered.empty());
  EXPECT_THROW(assign_supervised(props, std::vector<Box>{}, 0.5), InvalidArgument);
}

TEST(Assign, SupervisedUsesMaxOverGt) {
  const std::vector<Box> gt{{0, 0, 8, 8}, {30, 30, 40, 40}};
  const auto p = assign_supervised(std::vector<Box>{{30, 30, 40, 40}}, gt, 0.5);
  EXPECT_EQ(p.tampered.size(), 1u);
  EXPECT_EQ(p.source, PartitionSource::supervised_iou);
}

TEST(Assign, UnlabeledStrictThreshold) {
  const std::vector<double> s{0.9, 0.5, 0.1};
  const auto p = assign_unlabeled(s, 0.5, ScoreSource::rcnn);
  EXPECT_EQ(p.tampered, (std::vector<int>{0}));
  EXPECT_EQ(p.authentic, (std::vector<int>{1, 2}));
  EXPECT_EQ(p.source, PartitionSource::unlabeled_rcnn_score);
  EXPECT_EQ(assign_unlabeled(s, 0.5, ScoreSource::rpn).source, PartitionSource::unlabeled_rpn_score);
  const std::vector<double> low{0.1, 0.2};
  EXPECT_TRUE(assign_unlabeled(low, 0.5, ScoreSource::rcnn).tampered.empty());
  const std::vector<double> missing{0.9, std::nan("")};
  EXPECT_THROW(assign_unlabeled(missing, 0.5, ScoreSource::rcnn), PreconditionViolation);
}

TEST(Pairs, CountsPerStrategy) {
  Partition p;
  p.tampered = {0, 3};
  p.authentic = {1, 2, 4};
  const auto pcl = build_pairs(p, Strategy::pcl);
  EXPECT_EQ(pcl.n_positive(), 2u);
  EXPECT_EQ(pcl.negatives_rgb.size(), 6u);
  EXPECT_EQ(pcl.negatives_noise.size(), 6u);
  const auto rgb = build_pairs(p, Strategy::pcl_rgb);
  EXPECT_TRUE(rgb.rgb_term);
  EXPECT_FALSE(rgb.noise_term);
  EXPECT_TRUE(rgb.negatives_noise.empty());
  const auto noise = build_pairs(p, Strategy::pcl_noise);
  EXPECT_FALSE(noise.rgb_term);
  EXPECT_TRUE(noise.negatives_rgb.empty());
  EXPECT_TRUE(build_pairs(p, Strategy::off).empty());
  Partition none;
  none.authentic = {0, 1};
  EXPECT_TRUE(build_pairs(none, Strategy::pcl).empty());
  Partition four;
  four.tampered = {0, 1};
  four.authentic = {2, 3};
  const auto fcl = build_pairs(four, Strategy::pcl_fcl);
  EXPECT_EQ(fcl.n_positive(), 4u);
  EXPECT_EQ(fcl.negatives_rgb.size(), 12u);
}

TEST(Pairs, OnlyFullyContrastiveContainsTamperedNegatives) {
  oracle::Gen g(41);
  for (int t = 0; t < 50; ++t) {
    const auto part = random_partition(g, g.integer(2, 10));
    auto is_t = [&](int i) { return std::find(part.tampered.begin(), part.tampered.end(), i) != part.tampered.end(); };
    for (auto s : {Strategy::pcl, Strategy::pcl_rgb, Strategy::pcl_noise})
      for (auto [a, b] : build_pairs(part, s).negatives_rgb) EXPECT_FALSE(is_t(a) && is_t(b));
    if (part.tampered.size() >= 2) {
      bool found = false;
      for (auto [a, b] : build_pairs(part, Strategy::pcl_fcl).negatives_rgb) found = found || (is_t(a) && is_t(b));
      EXPECT_TRUE(found);
    }
  }
}

TEST(PclLoss, HandComputedScalar) {
  const Rows zr{{1, 0}, {0, 1}}, zn{{1, 0}, {0, 1}};
  Partition p;
  p.tampered = {0};
  p.authentic = {1};
  const double v = pcl_loss(to_tensor(zr), to_tensor(zn), build_pairs(p, Strategy::pcl), 0.1);
  EXPECT_NEAR(v, 2 * std::log1p(std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(v, 9.08e-5, 1e-7);
}

TEST(PclLoss, SinglePositiveNoNegativesIsZero) {
  const Rows z{{0.3, -1.2, 2.0}};
  Partition p;
  p.tampered = {0};
  EXPECT_NEAR(pcl_loss(to_tensor(z), to_tensor(z), build_pairs(p, Strategy::pcl), 0.1), 0.0, 1e-15);
}

TEST(PclLoss, MatchesLiteralOracle) {
  oracle::Gen g(42);
  for (int t = 0; t < 100; ++t) {
    const int n = g.integer(1, 14), dim = g.integer(2, 16);
    const Rows zr = random_rows(g, n, dim), zn = random_rows(g, n, dim);
    const auto part = random_partition(g, n);
    const double tau = std::vector<double>{0.05, 0.1, 0.5}[std::size_t(g.integer(0, 2))];
    for (auto s : {Strategy::pcl, Strategy::pcl_rgb, Strategy::pcl_noise}) {
      const double got = pcl_loss(to_tensor(zr), to_tensor(zn), build_pairs(part, s), tau);
      const double want = oracle::contrastive_loss(zr, zn, part.tampered, part.authentic, tau, s != Strategy::pcl_noise,
                                                   s != Strategy::pcl_rgb);
      EXPECT_NEAR(got, want, 1e-6);
    }
    // Fully contrastive: every proposal is a positive, every other proposal a negative.
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    double fcl = 0;
    for (int i : all) {
      std::vector<int> others;
      for (int j : all)
        if (j != i) others.push_back(j);
      fcl += oracle::contrastive_loss(zr, zn, {i}, others, tau);
    }
    EXPECT_NEAR(pcl_loss(to_tensor(zr), to_tensor(zn), build_pairs(part, Strategy::pcl_fcl), tau), fcl / n, 1e-6);
  }
}

TEST(PclLoss, ScaleInvariant) {
  oracle::Gen g(43);
  for (int t = 0; t < 30; ++t) {
    Rows zr = random_rows(g, 8, 6), zn = random_rows(g, 8, 6);
    const auto pairs = build_pairs(random_partition(g, 8), Strategy::pcl);
    const double before = pcl_loss(to_tensor(zr), to_tensor(zn), pairs, 0.1);
    const double c = g.real(0.01, 100);
    for (auto& v : zr[std::size_t(g.integer(0, 7))]) v *= c;
    EXPECT_NEAR(pcl_loss(to_tensor(zr), to_tensor(zn), pairs, 0.1), before, 1e-6);
  }
}

TEST(PclLoss, NegativeSimilarityMonotone) {
  oracle::Gen g(44);
  for (int t = 0; t < 30; ++t) {
    Rows zr = random_rows(g, 2, 4), zn = random_rows(g, 2, 4);
    Partition p;
    p.tampered = {0};
    p.authentic = {1};
    const auto pairs = build_pairs(p, Strategy::pcl_rgb);
    double prev = -1;
    // Rotate the negative noise row towards the anchor in steps.
    const auto start = zn[1];
    for (int k = 0; k <= 10; ++k) {
      for (std::size_t d = 0; d < 4; ++d) zn[1][d] = (1 - k / 10.0) * start[d] + (k / 10.0) * zr[0][d];
      const double v = pcl_loss(to_tensor(zr), to_tensor(zn), pairs, 0.1);
      if (k > 0) {
        EXPECT_GE(v, prev - 1e-12);
      }
      prev = v;
    }
  }
}

TEST(PclLoss, GradientMatchesFiniteDifferences) {
  oracle::Gen g(45);
  for (int t = 0; t < 50; ++t) {
    const int n = g.integer(2, 8), dim = g.integer(2, 6);
    const Rows zr = random_rows(g, n, dim), zn = random_rows(g, n, dim);
    const auto strategy = std::vector<Strategy>{Strategy::pcl, Strategy::pcl_rgb, Strategy::pcl_noise,
                                                Strategy::pcl_fcl}[std::size_t(g.integer(0, 3))];
    const auto pairs = build_pairs(random_partition(g, n), strategy);
    auto r = to_tensor(zr), nz = to_tensor(zn);
    Tensor<double> gr(r.shape()), gn(nz.shape());
    pcl_loss(r, nz, pairs, 0.1, &gr, &gn);
    for (int which = 0; which < 2; ++which) {
      auto& z = which ? nz : r;
      const auto& grad = which ? gn : gr;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double keep = z[i], h = 1e-6;
        z[i] = keep + h;
        const double up = pcl_loss(r, nz, pairs, 0.1);
        z[i] = keep - h;
        const double down = pcl_loss(r, nz, pairs, 0.1);
        z[i] = keep;
        const double fd = (up - down) / (2 * h);
        EXPECT_LE(std::abs(fd - grad[i]), 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(PclLoss, EmptyPairsGiveExactZero) {
  oracle::Gen g(46);
  auto r = to_tensor(random_rows(g, 3, 4)), n = to_tensor(random_rows(g, 3, 4));
  Tensor<double> gr(r.shape()), gn(n.shape());
  Partition p;
  p.authentic = {0, 1, 2};
  EXPECT_EQ(pcl_loss(r, n, build_pairs(p, Strategy::pcl), 0.1, &gr, &gn), 0.0);
  for (double v : gr.values()) EXPECT_EQ(v, 0.0);
  for (double v : gn.values()) EXPECT_EQ(v, 0.0);
}

TEST(PclLoss, InvariantToProposalOrder) {
  oracle::Gen g(47);
  for (int t = 0; t < 30; ++t) {
    const int n = 9;
    const Rows zr = random_rows(g, n, 5), zn = random_rows(g, n, 5);
    const auto part = random_partition(g, n);
    const double before = pcl_loss(to_tensor(zr), to_tensor(zn), build_pairs(part, Strategy::pcl), 0.1);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g.rng);
    Rows pr(n), pn(n);
    Partition pp;
    for (int i = 0; i < n; ++i) {
      pr[std::size_t(perm[std::size_t(i)])] = zr[std::size_t(i)];
      pn[std::size_t(perm[std::size_t(i)])] = zn[std::size_t(i)];
    }
    for (int i : part.tampered) pp.tampered.push_back(perm[std::size_t(i)]);
    for (int i : part.authentic) pp.authentic.push_back(perm[std::size_t(i)]);
    EXPECT_NEAR(pcl_loss(to_tensor(pr), to_tensor(pn), build_pairs(pp, Strategy::pcl), 0.1), before, 1e-9);
  }
}

TEST(PclLoss, ZeroVectorUsesNormGuard) {
  const Rows zr{{0, 0}, {0, 1}}, zn{{1, 0}, {0, 1}};
  Partition p;
  p.tampered = {0};
  p.authentic = {1};
  LossDiagnostics d;
  const double v = pcl_loss(to_tensor(zr), to_tensor(zn), build_pairs(p, Strategy::pcl), 0.1, static_cast<Tensor<double>*>(nullptr),
                            static_cast<Tensor<double>*>(nullptr), &d);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(d.numeric_guards, 1);
  EXPECT_THROW(pcl_loss(to_tensor(zr), to_tensor(zn), build_pairs(p, Strategy::pcl), 0.0), InvalidArgument);
}

TEST(Projection, MatchesMatrixOracle) {
  nn::ParamStore<double> store;
  ProjectionHead<double> head(store, Stream::rgb, 6, 5, 3, 7);
  oracle::Gen g(48);
  Tensor<double> h({4, 6});
  for (auto& v : h.values()) v = g.gauss();
  typename ProjectionHead<double>::Cache cache;
  const auto z = head.forward(h, nn::Mode::train, cache);
  ASSERT_EQ(z.dim(1), 3);
  const auto& w1 = store.get("pcl.rgb.fc1.weight").value;
  const auto& w2 = store.get("pcl.rgb.fc2.weight").value;
  std::vector<std::vector<double>> a(4, std::vector<double>(5));
  for (int b = 0; b < 4; ++b)
    for (int o = 0; o < 5; ++o)
      for (int i = 0; i < 6; ++i) a[std::size_t(b)][std::size_t(o)] += w1.at(o, i) * h.at(b, i);
  for (int o = 0; o < 5; ++o) {
    double mean = 0, var = 0;
    for (int b = 0; b < 4; ++b) mean += a[std::size_t(b)][std::size_t(o)] / 4;
    for (int b = 0; b < 4; ++b) var += std::pow(a[std::size_t(b)][std::size_t(o)] - mean, 2) / 4;
    for (int b = 0; b < 4; ++b)
      a[std::size_t(b)][std::size_t(o)] = std::max(0.0, (a[std::size_t(b)][std::size_t(o)] - mean) / std::sqrt(var + 1e-5));
  }
  for (int b = 0; b < 4; ++b)
    for (int k = 0; k < 3; ++k) {
      double want = 0;
      for (int o = 0; o < 5; ++o) want += w2.at(k, o) * a[std::size_t(b)][std::size_t(o)];
      EXPECT_NEAR(z.at(b, k), want, 1e-6);
    }
}

TEST(Projection, StreamsUseDisjointParameters) {
  nn::ParamStore<double> store;
  ProjectionHead<double> r(store, Stream::rgb, 6, 5, 3, 7), n(store, Stream::noise, 6, 5, 3, 7);
  oracle::Gen g(49);
  Tensor<double> h({3, 6});
  for (auto& v : h.values()) v = g.gauss();
  typename ProjectionHead<double>::Cache c;
  const auto before = n.forward(h, nn::Mode::train, c);
  for (auto& v : store.get("pcl.rgb.fc1.weight").value.values()) v += 1.0;
  const auto after = n.forward(h, nn::Mode::train, c);
  EXPECT_EQ(before.storage(), after.storage());
}

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "regcd/cd.hpp"
#include "regcd/error.hpp"
#include "regcd/geometry.hpp"
#include "regcd/ops.hpp"

namespace regcd {
namespace {

FeaturePyramid pooled_pyramid(const Tensor& f0, int scales, int timesteps = 1) {
  FeaturePyramid p;
  p.harmonized = true;
  for (int k = 0; k < timesteps; ++k) {
    p.timesteps.push_back(10 * k);
    std::vector<Var> levels{ag::constant(f0)};
    for (int i = 1; i < scales; ++i) levels.push_back(ag::constant(ag::avg_pool2(levels.back()).value()));
    p.features.push_back(levels);
  }
  return p;
}

TEST(Align, ZeroFlowIsIdentity) {
  Rng rng(1);
  const FeaturePyramid p = pooled_pyramid(testing::random_tensor({3, 16, 16}, rng), 3, 2);
  const AlignedPyramid a = align_features(p, ag::constant(Tensor({2, 16, 16})));
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 3; ++i) EXPECT_EQ(max_abs_diff(a.features.at(k, i).value(), p.at(k, i).value()), 0.0);
  for (const Tensor& c : a.covered) EXPECT_EQ(c.sum(), static_cast<double>(c.size()));
}

TEST(Align, ConstantFieldsAreWarpInvariantWhereCovered) {
  Rng rng(2);
  const FeaturePyramid p = pooled_pyramid(Tensor({2, 16, 16}, 0.7), 3);
  Tensor flow({2, 16, 16});
  for (double& v : flow.values()) v = rng.uniform(-3, 3);
  const AlignedPyramid a = align_features(p, ag::constant(flow));
  for (int i = 0; i < 3; ++i) {
    const Tensor& f = a.features.at(0, i).value();
    const Tensor& cov = a.covered[i];
    const std::size_t plane = cov.size();
    for (std::size_t q = 0; q < plane; ++q)
      if (cov[q] != 0.0) {
        EXPECT_NEAR(f[q], 0.7, 1e-12);
      }
  }
}

TEST(Align, PerScaleWarpMatchesWarpThenPool) {
  const PixelGrid grid(64, 64);
  const Tensor f0 = testing::smooth_image(grid, 2);
  const FeaturePyramid p = pooled_pyramid(f0, 4);
  const AffineTransform a = AffineTransform::from_params({3.0, -2.0, 6.0, 1.03}, grid);
  const DenseFlow flow = flow_from_affine(a, grid);
  const AlignedPyramid aligned = align_features(p, ag::constant(flow.uv));
  Var full = ag::warp(ag::constant(f0), ag::constant(flow.uv)).values;
  Tensor full_cov = warp(f0, flow).covered;
  Var cov_var = ag::constant(full_cov);
  for (int i = 1; i < 4; ++i) {
    full = ag::avg_pool2(full);
    cov_var = ag::avg_pool2(cov_var);
    const Tensor& got = aligned.features.at(0, i).value();
    double err = 0.0;
    int n = 0;
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < got.dim(1); ++y)
        for (int x = 0; x < got.dim(2); ++x) {
          if (cov_var.value().at(0, y, x) < 1.0 || aligned.covered[i].at(0, y, x) == 0.0) continue;
          err += std::abs(got.at(c, y, x) - full.value().at(c, y, x));
          ++n;
        }
    ASSERT_GT(n, 0);
    EXPECT_LT(err / n, 0.05) << "scale " << i;
  }
}

TEST(Descriptor, ElementwiseOracleAndSpecialCases) {
  Rng rng(3);
  const Tensor a = testing::random_tensor({3, 4, 5}, rng), b = testing::random_tensor({3, 4, 5}, rng);
  const Tensor u = build_descriptor(ag::constant(a), ag::constant(b)).value();
  ASSERT_EQ(u.shape(), (Shape{6, 4, 5}));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(u[i], std::abs(a[i] - b[i]));
    EXPECT_EQ(u[a.size() + i], a[i] * b[i]);
    EXPECT_GE(u[i], 0.0);
  }
  const Tensor same = build_descriptor(ag::constant(a), ag::constant(a)).value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(same[i], 0.0);
    EXPECT_EQ(same[a.size() + i], a[i] * a[i]);
  }
  const Tensor zero = build_descriptor(ag::constant(Tensor(a.shape())), ag::constant(b)).value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(zero[i], std::abs(b[i]));
    EXPECT_EQ(zero[a.size() + i], 0.0);
  }
}

TEST(SqueezeExcite, SaturatedGatesPassThrough) {
  Rng rng(4);
  SqueezeExcite se(16, 8, rng);
  se.expand.weight.mutable_value().fill(0.0);
  se.expand.bias.mutable_value().fill(60.0);
  const Tensor u = testing::random_tensor({16, 3, 3}, rng);
  EXPECT_LT(max_abs_diff(se(ag::constant(u)).value(), u), 1e-20);
}

TEST(SqueezeExcite, GatesShrinkAndZeroMapsToZero) {
  Rng rng(5);
  SqueezeExcite se(16, 8, rng);
  const Tensor u = testing::random_tensor({16, 4, 4}, rng, -3, 3);
  const Tensor y = se(ag::constant(u)).value();
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_LE(std::abs(y[i]), std::abs(u[i]));
  EXPECT_EQ(se(ag::constant(Tensor({16, 4, 4}))).value().max_abs(), 0.0);
  EXPECT_THROW(SqueezeExcite(4, 8, rng), ValidationError);
}

TEST(Aggregate, SingleUniformAndConvex) {
  Rng rng(6);
  const Tensor a = testing::random_tensor({2, 3, 3}, rng), b = testing::random_tensor({2, 3, 3}, rng);
  EXPECT_EQ(max_abs_diff(aggregate_timesteps({ag::constant(a)}, ag::constant(Tensor({1}, 0.4))).value(), a), 0.0);
  const Tensor avg = aggregate_timesteps({ag::constant(a), ag::constant(b)}, ag::constant(Tensor({2}))).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(avg[i], 0.5 * (a[i] + b[i]), 1e-15);
  Tensor logits({3});
  logits[0] = 2.0;
  logits[1] = -1.0;
  logits[2] = 0.3;
  const Tensor same = aggregate_timesteps({ag::constant(a), ag::constant(a), ag::constant(a)}, ag::constant(logits)).value();
  EXPECT_LT(max_abs_diff(same, a), 1e-15);
  const Tensor c = testing::random_tensor({2, 3, 3}, rng);
  const Tensor mix = aggregate_timesteps({ag::constant(a), ag::constant(b), ag::constant(c)}, ag::constant(logits)).value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GE(mix[i], std::min({a[i], b[i], c[i]}) - 1e-15);
    EXPECT_LE(mix[i], std::max({a[i], b[i], c[i]}) + 1e-15);
  }
  EXPECT_THROW(aggregate_timesteps({ag::constant(a)}, ag::constant(Tensor({2}))), ValidationError);
}

CDHeadConfig small_cd() {
  CDHeadConfig cfg;
  cfg.se_ratio = 2;
  cfg.decoder_widths = {4, 4, 4, 4, 4};
  return cfg;
}

std::vector<Var> random_descriptors(const std::vector<int>& widths, int size, Rng& rng) {
  std::vector<Var> u;
  for (std::size_t i = 0; i < widths.size(); ++i)
    u.push_back(ag::constant(testing::random_tensor({2 * widths[i], size >> i, size >> i}, rng)));
  return u;
}

TEST(HierarchicalDecode, OutputResolutionAndBias) {
  Rng rng(7);
  const std::vector<int> widths{2, 2, 3, 3, 4};
  CDHead head(widths, 1, small_cd(), rng);
  const auto u = random_descriptors(widths, 32, rng);
  EXPECT_EQ(head.decode(u).shape(), (Shape{1, 32, 32}));
  head.projection.weight.mutable_value().fill(0.0);
  head.projection.bias.mutable_value()[0] = -0.7;
  const Tensor s = head.decode(u).value();
  for (double v : s.values()) EXPECT_EQ(v, -0.7);
  const Tensor p = change_probability(s);
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 / (1.0 + std::exp(0.7)), 1e-15);
}

TEST(HierarchicalDecode, RejectsBrokenResolutionChain) {
  Rng rng(8);
  const std::vector<int> widths{2, 2, 3, 3, 4};
  CDHead head(widths, 1, small_cd(), rng);
  auto u = random_descriptors(widths, 32, rng);
  u[2] = ag::constant(Tensor({6, 7, 7}));
  EXPECT_THROW(head.decode(u), ValidationError);
  EXPECT_THROW(head.decode({u[0]}), ValidationError);
}

// A one-pixel perturbation at scale 1 of a 64^2 chain reaches at most
// 2 (two 3x3 convs) + 1 (bilinear x2) scale-1 pixels plus 2 full-resolution
// pixels from the last stage.
TEST(HierarchicalDecode, ReceptiveFieldIsLocal) {
  Rng rng(9);
  const std::vector<int> widths{2, 2, 3, 3, 4};
  CDHead head(widths, 1, small_cd(), rng);
  auto u = random_descriptors(widths, 64, rng);
  const Tensor base = head.decode(u).value();
  Tensor bumped = u[1].value();
  for (int c = 0; c < bumped.dim(0); ++c) bumped.at(c, 16, 16) += 5.0;
  u[1] = ag::constant(bumped);
  const Tensor s = head.decode(u).value();
  int changed = 0;
  // Scale-1 pixels 14..18 cover full-resolution rows 27..38 after upsampling
  // (pixel centres (y + 0.5) / 2 - 0.5 within one cell), widened by two.
  const int lo = 25, hi = 40;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const bool moved = s.at(0, y, x) != base.at(0, y, x);
      changed += moved;
      if (moved) {
        EXPECT_GE(y, lo);
        EXPECT_LE(y, hi);
        EXPECT_GE(x, lo);
        EXPECT_LE(x, hi);
      }
    }
  EXPECT_GT(changed, 0);
}

TEST(CDLoss, UninformativeLogitIsLn2) {
  Tensor y({1, 4, 4});
  for (int i = 0; i < 8; ++i) y[i] = 1.0;
  const CDLoss l = cd_loss(ag::constant(Tensor({1, 4, 4})), y, Tensor({1, 4, 4}, 1.0));
  EXPECT_NEAR(l.value.value()[0], std::log(2.0), 1e-12);
  EXPECT_FALSE(l.empty);
}

TEST(CDLoss, ConfidentCorrectLogitsGoToZero) {
  Tensor y({1, 2, 2});
  y[0] = y[3] = 1.0;
  Tensor s({1, 2, 2});
  s[0] = s[3] = 50.0;
  s[1] = s[2] = -50.0;
  EXPECT_LT(cd_loss(ag::constant(s), y, Tensor({1, 2, 2}, 1.0)).value.value()[0], 1e-20);
}

TEST(CDLoss, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  Tensor y({1, 8, 8}), m({1, 8, 8}, 1.0);
  for (double& v : y.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  m[5] = m[17] = 0.0;
  const double err = testing::gradcheck([&](const std::vector<Var>& p) { return cd_loss(p[0], y, m).value; },
                                        {testing::random_tensor({1, 8, 8}, rng, -4, 4)});
  EXPECT_LT(err, 1e-4);
}

TEST(CDLoss, EmptyMaskFlagged) {
  const CDLoss l = cd_loss(ag::constant(Tensor({1, 2, 2}, 1.0)), Tensor({1, 2, 2}), Tensor({1, 2, 2}));
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(l.value.value()[0], 0.0);
}

TEST(ChangeMask, ThresholdAtHalf) {
  Tensor s({1, 1, 3});
  s[0] = 0.0;
  s[1] = -1e-9;
  s[2] = 3.0;
  const Tensor m = change_mask(s, 0.5);
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 0.0);
  EXPECT_EQ(m[2], 1.0);
  for (double p : change_probability(s).values()) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(CDHead, EndToEndGradientMatchesFiniteDifferences) {
  Rng rng(11);
  const std::vector<int> widths{2, 2, 2};
  CDHeadConfig cfg = small_cd();
  cfg.decoder_widths = {3, 3, 3};
  CDHead head(widths, 2, cfg, rng);
  nn::ParamList params;
  head.collect(params, "cd");
  Tensor y({1, 8, 8});
  for (double& v : y.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  std::vector<std::vector<Var>> u(2);
  for (int k = 0; k < 2; ++k) u[k] = random_descriptors(widths, 8, rng);
  std::vector<Tensor> values;
  for (const auto& p : params) values.push_back(p.var.value());
  // Check gamma and the projection: the tail of the chain plus the aggregation weights.
  const double err = testing::gradcheck(
      [&](const std::vector<Var>& p) {
        CDHead h = head;
        h.gamma_logits[0] = p[0];
        h.gamma_logits[2] = p[1];
        h.projection.weight = p[2];
        return cd_loss(h.decode(h.aggregate(u)), y, Tensor({1, 8, 8}, 1.0)).value;
      },
      {testing::random_tensor({2}, rng), testing::random_tensor({2}, rng), head.projection.weight.value()});
  EXPECT_LT(err, 1e-4);
}

// Unchanged content under an affine perturbation: supplying the true flow
// collapses the difference descriptors relative to no alignment.
TEST(CDHead, AlignmentShrinksPseudoDifferences) {
  const PixelGrid grid(64, 64);
  const Tensor img_a = testing::smooth_image(grid, 3);
  PerturbationRanges ranges;
  ranges.dx = {4, 6};
  ranges.dy = {-6, -4};
  ranges.theta_deg = {5, 8};
  const AffineTransform a = sample_affine(3, ranges, grid);
  const DenseFlow flow = flow_from_affine(a, grid);
  // B(x) = A-content at A(x), so sampling B at A^{-1}(x) recovers A.
  const Tensor img_b = testing::smooth_image_mapped(grid, 3, a);
  const FeaturePyramid pa = pooled_pyramid(img_a, 4), pb = pooled_pyramid(img_b, 4);
  const AlignedPyramid aligned = align_features(pb, ag::constant(flow.uv));
  const AlignedPyramid unaligned = align_features(pb, ag::constant(Tensor({2, 64, 64})));
  for (int i = 0; i < 4; ++i) {
    const Tensor d1 = build_descriptor(pa.at(0, i), aligned.features.at(0, i)).value();
    const Tensor d0 = build_descriptor(pa.at(0, i), unaligned.features.at(0, i)).value();
    const Tensor& cov = aligned.covered[i];
    const int plane = static_cast<int>(cov.size());
    double s1 = 0.0, s0 = 0.0;
    int n = 0;
    for (int c = 0; c < 3; ++c)
      for (int q = 0; q < plane; ++q) {
        if (cov[q] == 0.0) continue;
        s1 += d1[c * plane + q];
        s0 += d0[c * plane + q];
        ++n;
      }
    ASSERT_GT(n, 0);
    EXPECT_LT(s1, 0.1 * s0) << "scale " << i << ": aligned " << s1 / n << " vs " << s0 / n;
  }
}

}  // namespace
}  // namespace regcd

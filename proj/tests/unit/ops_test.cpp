#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "regcd/ops.hpp"

namespace regcd {
namespace {

using testing::gradcheck;
using testing::random_tensor;

// Weighted sum reduces any field to a scalar with a nontrivial upstream gradient.
Var probe(const Var& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ag::sum(ag::mul(x, ag::constant(random_tensor(x.shape(), rng))));
}

constexpr double kTol = 1e-6;

TEST(Ops, ElementwiseGradients) {
  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.5, 2.0);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::add(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::sub(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::mul(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::gelu(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::sigmoid(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::tanh(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::log(v[0])); }, {b}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::cos(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::sin(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return probe(ag::exp(v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto& v) { return ag::mean(ag::square(v[0])); }, {a}), kTol);
}

TEST(Ops, ChannelGradients) {
  Rng rng(2);
  Tensor x = random_tensor({4, 3, 5}, rng), v = random_tensor({4}, rng), m = random_tensor({1, 3, 5}, rng);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::add_channel(p[0], p[1])); }, {x, v}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::mul_channel(p[0], p[1])); }, {x, v}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::channel_mean(p[0])); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::sum_channels(p[0])); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::mul_plane(p[0], p[1])); }, {x, m}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::softmax_channels(p[0])); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::log_softmax_channels(p[0])); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::l2_normalize_channels(p[0])); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::norm_channels(p[0])); }, {x}), kTol);
  Tensor g = random_tensor({4}, rng), b = random_tensor({4}, rng);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::layer_norm_channels(p[0], p[1], p[2])); }, {x, g, b}), 1e-5);
}

TEST(Ops, MatrixGradients) {
  Rng rng(3);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
  Tensor at = random_tensor({4, 3}, rng), bt = random_tensor({5, 4}, rng);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::matmul(p[0], p[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::matmul(p[0], p[1], true, false)); }, {at, b}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::matmul(p[0], p[1], false, true)); }, {a, bt}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::matmul(p[0], p[1], true, true)); }, {at, bt}), kTol);

  Tensor x = random_tensor({3, 2, 4}, rng), w = random_tensor({5, 3}, rng), bias = random_tensor({5}, rng);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::linear(p[0], p[1], p[2])); }, {x, w, bias}), kTol);
}

TEST(Ops, ConvolutionGradients) {
  Rng rng(4);
  Tensor x = random_tensor({2, 6, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::conv2d(p[0], p[1], p[2], 1, 1)); }, {x, w, b}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::conv2d(p[0], p[1], p[2], 2, 1)); }, {x, w, b}), kTol);
  Tensor w1 = random_tensor({3, 2, 1, 1}, rng);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::conv2d(p[0], p[1], p[2], 1, 0)); }, {x, w1, b}), kTol);
}

TEST(Ops, ConvolutionMatchesDirectSum) {
  Rng rng(5);
  Tensor x = random_tensor({2, 5, 4}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  Tensor y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), 1, 1).value();
  for (int o = 0; o < 3; ++o)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 4; ++xx) {
        double acc = b[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = yy + ky - 1, ix = xx + kx - 1;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
              acc += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x.at(c, iy, ix);
            }
        EXPECT_NEAR(y.at(o, yy, xx), acc, 1e-12);
      }
}

TEST(Ops, ShapeAndResamplingGradients) {
  Rng rng(6);
  Tensor x = random_tensor({3, 4, 6}, rng), y = random_tensor({2, 4, 6}, rng);
  EXPECT_LT(gradcheck(
                [](auto& p) {
                  std::vector<Var> parts{p[0], p[1]};
                  return probe(ag::concat_channels(parts));
                },
                {x, y}),
            kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::slice_channels(p[0], 1, 3)); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::resize_bilinear(p[0], 8, 12)); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::resize_bilinear(p[0], 3, 2)); }, {x}), kTol);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::avg_pool2(p[0])); }, {x}), kTol);
  Tensor fb = random_tensor({3, 4, 6}, rng);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::local_correlation(p[0], p[1], 2)); }, {x, fb}), kTol);
}

TEST(Ops, ShiftedDotMatchesLoopAndGradients) {
  Rng rng(12);
  const Tensor a = random_tensor({3, 5, 6}, rng), b0 = random_tensor({3, 5, 6}, rng), b1 = random_tensor({3, 5, 6}, rng);
  const std::vector<ag::IntegerShift> shifts{{0, 0, 0}, {1, 2, -1}, {0, -3, 4}, {1, 7, 0}};
  Tensor mask({4, 5, 6}, 1.0);
  mask[3] = 0.0;
  mask[30 + 7] = 0.5;
  const std::vector<Var> src{ag::constant(b0), ag::constant(b1)};
  const Tensor y = ag::shifted_dot(ag::constant(a), src, shifts, mask).value();
  for (int k = 0; k < 4; ++k)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 6; ++xx) {
        const auto& s = shifts[k];
        const Tensor& b = s.source == 0 ? b0 : b1;
        const int sy = yy + s.dy, sx = xx + s.dx;
        double expect = 0.0;
        if (sy >= 0 && sy < 5 && sx >= 0 && sx < 6)
          for (int c = 0; c < 3; ++c) expect += a.at(c, yy, xx) * b.at(c, sy, sx);
        EXPECT_NEAR(y.at(k, yy, xx), expect * mask.at(k, yy, xx), 1e-14);
      }
  EXPECT_LT(gradcheck(
                [&](auto& p) {
                  std::vector<Var> s{p[1], p[2]};
                  return probe(ag::shifted_dot(p[0], s, shifts, mask));
                },
                {a, b0, b1}),
            kTol);
}

TEST(Ops, MaskedStandardizeChannels) {
  Rng rng(13);
  const Tensor x = random_tensor({5, 3, 4}, rng);
  Tensor mask({5, 3, 4}, 1.0);
  for (int p = 0; p < 12; ++p) mask[(p % 5) * 12 + p] = 0.0;
  for (int ch = 0; ch < 5; ++ch) mask[ch * 12 + 11] = 0.0;
  const Tensor y = ag::masked_standardize_channels(ag::constant(x), mask).value();
  for (int p = 0; p < 11; ++p) {
    std::vector<double> kept;
    for (int ch = 0; ch < 5; ++ch)
      if (mask[ch * 12 + p] != 0.0) kept.push_back(x[ch * 12 + p]);
    double mu = 0.0, var = 0.0;
    for (double v : kept) mu += v / kept.size();
    for (double v : kept) var += (v - mu) * (v - mu) / kept.size();
    for (int ch = 0, j = 0; ch < 5; ++ch) {
      if (mask[ch * 12 + p] == 0.0) {
        EXPECT_EQ(y[ch * 12 + p], 0.0);
        continue;
      }
      EXPECT_NEAR(y[ch * 12 + p], (kept[j++] - mu) / std::sqrt(var + 1e-12), 1e-12);
    }
  }
  for (int ch = 0; ch < 5; ++ch) EXPECT_EQ(y[ch * 12 + 11], 0.0);
  EXPECT_LT(gradcheck([&](auto& p) { return probe(ag::masked_standardize_channels(p[0], mask)); }, {x}), kTol);
}

TEST(Ops, WarpGradientWithRespectToFieldAndFlow) {
  Rng rng(7);
  Tensor f = random_tensor({2, 6, 6}, rng);
  // Keep samples away from integer coordinates where the bilinear kernel has kinks.
  Tensor flow({2, 6, 6});
  for (double& v : flow.values()) v = std::floor(rng.uniform(-2.0, 2.0)) + rng.uniform(0.2, 0.8);
  EXPECT_LT(gradcheck([](auto& p) { return probe(ag::warp(p[0], p[1]).values); }, {f, flow}), 1e-5);
}

TEST(Ops, BinaryCrossEntropyGradient) {
  Rng rng(8);
  Tensor s = random_tensor({1, 4, 4}, rng, -3, 3), y({1, 4, 4}), mask({1, 4, 4}, 1.0);
  for (double& v : y.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  mask[3] = 0.0;
  EXPECT_LT(gradcheck([&](auto& p) { return ag::bce_with_logits(p[0], y, mask); }, {s}), kTol);
}

TEST(Ops, SoftmaxSumsToOne) {
  Rng rng(9);
  Tensor x = random_tensor({7, 3, 3}, rng, -5, 5);
  Tensor p = ag::softmax_channels(ag::constant(x)).value();
  for (std::size_t i = 0; i < 9; ++i) {
    double total = 0.0;
    for (int c = 0; c < 7; ++c) total += p[c * 9 + i];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ops, NoGradGuardSkipsGraph) {
  Var a(Tensor({2}, 1.0), true);
  NoGradGuard guard;
  Var b = ag::scale(a, 2.0);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Ops, LeafGradientsAccumulateAcrossBackwardCalls) {
  Var a(Tensor({3}, 1.0), true);
  backward(ag::sum(ag::scale(a, 2.0)));
  backward(ag::sum(ag::scale(a, 3.0)));
  EXPECT_DOUBLE_EQ(a.grad()[0], 5.0);
  a.zero_grad();
  EXPECT_DOUBLE_EQ(a.grad()[2], 0.0);
}

}  // namespace
}  // namespace regcd

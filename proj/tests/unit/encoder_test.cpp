#include <gtest/gtest.h>

#include <cmath>

#include "regcd/encoder.hpp"
#include "regcd/error.hpp"
#include "regcd/io.hpp"
#include "regcd/ops.hpp"
#include "tempdir.hpp"

namespace regcd {
namespace {

ToyDenoiserConfig small_config() {
  ToyDenoiserConfig c;
  c.widths = {8, 8, 12, 12, 16};
  c.embed_dim = 16;
  return c;
}

Tensor noise_image(int size, std::uint64_t seed) {
  Tensor img({3, size, size});
  Rng rng(seed);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

TEST(NoiseSchedule, AlphaBarDecreasesFromOneTowardZero) {
  const NoiseSchedule s = NoiseSchedule::linear();
  ASSERT_EQ(s.steps(), 1000);
  for (int t = 1; t < s.steps(); ++t) EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
  EXPECT_GT(s.alpha_bar.front(), 0.999);
  EXPECT_LT(s.alpha_bar.back(), 1e-3);
  EXPECT_DOUBLE_EQ(s.beta.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta.back(), 2e-2);
  EXPECT_THROW(NoiseSchedule::from_betas({0.0}), ValidationError);
}

TEST(ForwardNoise, FirstStepIsNearlyClean) {
  const NoiseSchedule s = NoiseSchedule::linear();
  const Tensor x0 = noise_image(64, 1);
  const Tensor xt = forward_noise(x0, 0, 5, s);
  double mad = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) mad += std::abs(xt[i] - (2 * x0[i] - 1));
  EXPECT_LT(mad / x0.size(), 0.02);
}

TEST(ForwardNoise, ZeroAlphaBarIsPureNoise) {
  const NoiseSchedule s = NoiseSchedule::from_betas({0.5, 1.0});
  ASSERT_EQ(s.alpha_bar[1], 0.0);
  const Tensor x0 = noise_image(128, 2).reshaped({3, 128, 128});
  Tensor one({1, 128, 128}, 0.7);
  const Tensor xt = forward_noise(one, 1, 9, s);
  double mean = 0, sq = 0;
  for (double v : xt.values()) mean += v;
  mean /= xt.size();
  for (double v : xt.values()) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_NEAR(std::sqrt(sq / xt.size()), 1.0, 0.05);
}

TEST(ForwardNoise, VarianceLaw) {
  const NoiseSchedule s = NoiseSchedule::linear();
  const Tensor x0 = noise_image(128, 3).reshaped({3, 128, 128});
  Tensor single({1, 128, 128});
  for (int i = 0; i < 128 * 128; ++i) single[i] = x0[i];
  for (int t : {50, 400, 650}) {
    const Tensor xt = forward_noise(single, t, 11 + t, s);
    const double a = s.alpha_bar[t];
    double mean = 0, sq = 0;
    std::vector<double> r(xt.size());
    for (std::size_t i = 0; i < xt.size(); ++i) mean += (r[i] = xt[i] - std::sqrt(a) * (2 * single[i] - 1));
    mean /= r.size();
    for (double v : r) sq += (v - mean) * (v - mean);
    EXPECT_NEAR(sq / r.size(), 1 - a, 0.03 * (1 - a)) << "t=" << t;
  }
}

TEST(ForwardNoise, DeterministicAndRangeChecked) {
  const NoiseSchedule s = NoiseSchedule::linear();
  const Tensor x0 = noise_image(16, 4);
  EXPECT_EQ(forward_noise(x0, 300, 7, s).storage(), forward_noise(x0, 300, 7, s).storage());
  EXPECT_NE(forward_noise(x0, 300, 7, s).storage(), forward_noise(x0, 300, 8, s).storage());
  EXPECT_THROW(forward_noise(x0, 1000, 7, s), ValidationError);
  EXPECT_THROW(forward_noise(x0, -1, 7, s), ValidationError);
}

TEST(Pretrain, ZeroStepsKeepsInitialization) {
  ToyDenoiser a(small_config(), 3), b(small_config(), 3);
  const auto losses = pretrain_toy_denoiser(a, {}, {0, 2, 1e-3, 0});
  EXPECT_TRUE(losses.empty());
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value().storage(), pb[i].var.value().storage());
}

TEST(Pretrain, SameSeedGivesIdenticalParameters) {
  const std::vector<Tensor> corpus{noise_image(32, 1), noise_image(32, 2)};
  ToyDenoiser a(small_config(), 3), b(small_config(), 3);
  pretrain_toy_denoiser(a, corpus, {10, 2, 1e-3, 5});
  pretrain_toy_denoiser(b, corpus, {10, 2, 1e-3, 5});
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value().storage(), pb[i].var.value().storage());
}

// Zero-predictor baseline: E||eps||^2 / n = 1.
TEST(Pretrain, ConstantCorpusBeatsZeroPredictor) {
  const std::vector<Tensor> corpus{Tensor({3, 32, 32}, 0.6)};
  ToyDenoiser model(small_config(), 1);
  pretrain_toy_denoiser(model, corpus, {500, 1, 2e-3, 2});
  NoGradGuard no_grad;
  double total = 0;
  const int trials = 64;
  for (int k = 0; k < trials; ++k) {
    Rng rng(derive_seed(1234, k));
    const int t = static_cast<int>(rng.below(1000));
    const Tensor eps = standard_noise(corpus[0].shape(), rng.next());
    const Tensor xt = forward_noise(corpus[0], t, eps, model.schedule());
    const Tensor pred = model.predict_noise(ag::constant(xt), t).value();
    double mse = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) mse += (pred[i] - eps[i]) * (pred[i] - eps[i]);
    total += mse / eps.size();
  }
  EXPECT_LT(total / trials, 0.9);
}

TEST(Pretrain, EmptyCorpusRejected) {
  ToyDenoiser model(small_config(), 1);
  EXPECT_THROW(pretrain_toy_denoiser(model, {}, {1, 1, 1e-3, 0}), ValidationError);
}

TEST(Extract, ResolutionLaw) {
  auto model = std::make_shared<ToyDenoiser>(small_config(), 1);
  const ToyBackend backend(model);
  const FeaturePyramid p = backend.extract(noise_image(256, 1), {50, 650}, 3, "");
  ASSERT_EQ(p.features.size(), 2u);
  ASSERT_EQ(p.scales(), 5);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(p.at(0, i).value().dim(1), 256 >> i);
    EXPECT_EQ(p.at(1, i).value().dim(2), 256 >> i);
    EXPECT_EQ(p.at(0, i).value().dim(0), small_config().widths[i]);
  }
}

TEST(Extract, SingletonTimestepsAndDeterminism) {
  auto model = std::make_shared<ToyDenoiser>(small_config(), 1);
  const ToyBackend backend(model);
  const Tensor img = noise_image(32, 2);
  const FeaturePyramid a = backend.extract(img, {400}, 3, "");
  const FeaturePyramid b = backend.extract(img, {400}, 3, "");
  ASSERT_EQ(a.features.size(), 1u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.at(0, i).value().storage(), b.at(0, i).value().storage());
  EXPECT_THROW(backend.extract(noise_image(40, 1), {50}, 3, ""), ValidationError);
}

TEST(Harmonize, StandardizesAcrossChannels) {
  Rng rng(4);
  auto model = std::make_shared<ToyDenoiser>(small_config(), 1);
  const FeaturePyramid raw = ToyBackend(model).extract(noise_image(32, 3), {50, 400}, 1, "");
  const Harmonizer h(small_config().widths, {32, 32, 64, 64, 128}, rng);
  const FeaturePyramid out = h(raw);
  EXPECT_TRUE(out.harmonized);
  const std::vector<int> expected{32, 32, 64, 64, 128};
  for (std::size_t k = 0; k < 2; ++k)
    for (int i = 0; i < 5; ++i) {
      const Tensor& f = out.at(k, i).value();
      ASSERT_EQ(f.dim(0), expected[i]);
      for (std::size_t p = 0; p < f.plane(); p += 7) {
        double mean = 0, sq = 0;
        for (int c = 0; c < f.dim(0); ++c) mean += f[c * f.plane() + p];
        mean /= f.dim(0);
        for (int c = 0; c < f.dim(0); ++c) sq += std::pow(f[c * f.plane() + p] - mean, 2);
        EXPECT_NEAR(mean, 0.0, 1e-9);
        const double var = sq / f.dim(0);
        if (var > 1e-6) {
          EXPECT_NEAR(var, 1.0, 1e-2);
        }
      }
    }
  EXPECT_THROW(h(out), ValidationError);
}

TEST(Harmonize, IdentityProjectionGivesStandardizedInput) {
  Rng rng(5);
  const std::vector<int> widths{4, 4, 4, 4, 4};
  Harmonizer h(widths, widths, rng);
  h.set_identity();
  FeaturePyramid raw;
  raw.timesteps = {50};
  raw.features.emplace_back();
  for (int i = 0; i < 5; ++i) {
    Tensor f({4, 3, 3});
    for (double& v : f.values()) v = rng.uniform(-2, 2);
    raw.features[0].push_back(ag::constant(f));
  }
  const FeaturePyramid out = h(raw);
  for (int i = 0; i < 5; ++i) {
    const Tensor& in = raw.at(0, i).value();
    const Tensor& o = out.at(0, i).value();
    for (std::size_t p = 0; p < 9; ++p) {
      double mean = 0, sq = 0;
      for (int c = 0; c < 4; ++c) mean += in[c * 9 + p] / 4;
      for (int c = 0; c < 4; ++c) sq += std::pow(in[c * 9 + p] - mean, 2) / 4;
      for (int c = 0; c < 4; ++c) EXPECT_NEAR(o[c * 9 + p], (in[c * 9 + p] - mean) / std::sqrt(sq + 1e-5), 1e-12);
    }
  }
}

TEST(Harmonize, GradientsReachProjectionButNotEncoder) {
  Rng rng(6);
  auto model = std::make_shared<ToyDenoiser>(small_config(), 1);
  const FeaturePyramid raw = ToyBackend(model).extract(noise_image(32, 3), {50}, 1, "");
  const Harmonizer h(small_config().widths, {8, 8, 8, 8, 8}, rng);
  const FeaturePyramid out = h(raw);
  Var total = ag::sum(ag::square(out.at(0, 0)));
  for (int i = 1; i < 5; ++i) total = ag::add(total, ag::sum(ag::mul(out.at(0, i), out.at(0, i))));
  backward(total);
  for (const auto& p : model->parameters()) EXPECT_FALSE(p.var.node()->has_grad()) << p.name;
  double norm = 0;
  for (const auto& p : h.parameters()) norm += p.var.grad().max_abs();
  EXPECT_GT(norm, 0.0);
}

TEST(ImportBackend, ReadsFeatureFiles) {
  testing::TempDir tmp;
  const std::vector<int> ch{2, 3, 4, 5, 6};
  std::filesystem::create_directories(tmp.path() / "train/a/000001");
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    Tensor f({ch[i], 32 >> i, 32 >> i});
    for (double& v : f.values()) v = static_cast<float>(rng.normal());
    write_feature_file(tmp.path() / "train/a/000001" / ("t50_s" + std::to_string(i) + ".fea"), f);
  }
  const ImportBackend backend(tmp.path(), ch);
  const FeaturePyramid p = backend.extract(Tensor({3, 32, 32}), {50}, 0, "train/a/000001");
  EXPECT_EQ(p.at(0, 4).value().dim(0), 6);
  EXPECT_EQ(p.at(0, 4).value().dim(1), 2);
  EXPECT_THROW(backend.extract(Tensor({3, 32, 32}), {400}, 0, "train/a/000001"), IoError);
}

TEST(ToyDenoiser, SaveLoadRoundTrip) {
  testing::TempDir tmp;
  ToyDenoiser a(small_config(), 8);
  a.save(tmp.path() / "enc.ckpt");
  const ToyDenoiser b = ToyDenoiser::load(tmp.path() / "enc.ckpt");
  EXPECT_EQ(b.config().widths, a.config().widths);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value().storage(), pb[i].var.value().storage());
}

}  // namespace
}  // namespace regcd

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "oracles.hpp"
#include "regcd/data.hpp"
#include "regcd/error.hpp"
#include "regcd/io.hpp"
#include "regcd/rng.hpp"
#include "tempdir.hpp"

namespace regcd {
namespace {

namespace fs = std::filesystem;

// One-sample Kolmogorov-Smirnov test against U[lo, hi]; returns the
// asymptotic p-value with the Stephens small-sample correction.
double ks_uniform_pvalue(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = (xs[i] - lo) / (hi - lo);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double q = 0.0;
  for (int j = 1; j <= 100; ++j) q += 2 * ((j % 2) ? 1 : -1) * std::exp(-2.0 * j * j * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

Tensor rgb_noise(int size, std::uint64_t seed) { return value_noise(size, 3, seed); }

TEST(KsOracle, RejectsObviouslyNonUniformSample) {
  std::vector<double> xs(100);
  for (int i = 0; i < 100; ++i) xs[i] = 0.5 * i / 100.0;
  EXPECT_LT(ks_uniform_pvalue(xs, 0.0, 1.0), 1e-6);
}

TEST(GeneratePair, ParametersAreUniformOverProtocolRanges) {
  const Tensor img = rgb_noise(32, 1);
  const Tensor mask({1, 32, 32});
  std::vector<double> dx, dy, th, sc;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SamplePair s = generate_pair(img, img, mask, derive_seed(99, seed), {});
    dx.push_back(s.params.dx);
    dy.push_back(s.params.dy);
    th.push_back(s.params.theta_deg);
    sc.push_back(s.params.scale);
  }
  EXPECT_GT(ks_uniform_pvalue(dx, -25, 25), 0.01);
  EXPECT_GT(ks_uniform_pvalue(dy, -25, 25), 0.01);
  EXPECT_GT(ks_uniform_pvalue(th, -30, 30), 0.01);
  EXPECT_GT(ks_uniform_pvalue(sc, 0.8, 1.25), 0.01);
}

TEST(GeneratePair, IdentityRangesLeaveImageUnchanged) {
  const Tensor img = rgb_noise(32, 2);
  const SamplePair s = generate_pair(img, img, Tensor({1, 32, 32}), 4, PerturbationRanges::identity());
  EXPECT_LT(max_abs_diff(s.image_b, img), 1e-12);
  EXPECT_EQ(s.flow.uv.max_abs(), 0.0);
  EXPECT_EQ(s.flow.valid.sum(), 32.0 * 32.0);
}

TEST(GeneratePair, TranslationShiftsContent) {
  const Tensor img = rgb_noise(32, 3);
  PerturbationRanges r = PerturbationRanges::identity();
  r.dx = {5, 5};
  r.dy = {-3, -3};
  const SamplePair s = generate_pair(img, img, Tensor({1, 32, 32}), 0, r);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      EXPECT_NEAR(s.flow.u(y, x), -5.0, 1e-12);
      EXPECT_NEAR(s.flow.v(y, x), 3.0, 1e-12);
      if (x + 5 < 32 && y - 3 >= 0) {
        EXPECT_NEAR(s.image_b.at(1, y, x), img.at(1, y - 3, x + 5), 1e-12);
      }
    }
}

TEST(GeneratePair, FlowEqualsAnalyticFlowAndMaskStaysInFrameA) {
  const ToyItem item = make_toy_item(64, 17);
  const SamplePair s = generate_pair(item.image_a, item.image_b0, item.change, 23, {});
  const DenseFlow expected = flow_from_affine(s.transform, PixelGrid(64, 64));
  EXPECT_EQ(max_abs_diff(s.flow.uv, expected.uv), 0.0);
  EXPECT_EQ(max_abs_diff(s.change, item.change), 0.0);
  EXPECT_EQ(max_abs_diff(s.image_a, item.image_a), 0.0);
}

TEST(Dihedral, WarpCommutesWithEveryFlipAndTranspose) {
  const ToyItem item = make_toy_item(32, 5);
  PerturbationRanges r;
  r.theta_deg = {-20, 20};
  const SamplePair s = generate_pair(item.image_a, item.image_b0, item.change, 9, r);
  const WarpResult base = warp(s.image_b, s.flow);
  for (int code = 0; code < 8; ++code) {
    const SamplePair d = dihedral(s, code);
    const WarpResult moved = warp(d.image_b, d.flow);
    // Pack the warped result as a pair so the same remap applies to it.
    SamplePair ref = s;
    ref.image_b = base.values;
    ref.change = base.covered;
    const SamplePair expect = dihedral(ref, code);
    EXPECT_LT(max_abs_diff(moved.values, expect.image_b), 1e-12) << code;
    EXPECT_EQ(max_abs_diff(moved.covered, expect.change), 0.0) << code;
    EXPECT_EQ(d.flow.valid.sum(), s.flow.valid.sum());
  }
}

TEST(Dihedral, MirrorNegatesTranslationAndInvolutes) {
  const ToyItem item = make_toy_item(32, 3);
  PerturbationRanges r = PerturbationRanges::identity();
  r.dx = {5, 5};
  r.dy = {-3, -3};
  const SamplePair s = generate_pair(item.image_a, item.image_b0, item.change, 1, r);
  const SamplePair m = dihedral(s, 1);
  EXPECT_DOUBLE_EQ(m.flow.u(16, 16), -s.flow.u(16, 16));
  EXPECT_DOUBLE_EQ(m.flow.v(16, 16), s.flow.v(16, 16));
  const SamplePair t = dihedral(s, 4);
  EXPECT_DOUBLE_EQ(t.flow.u(16, 16), s.flow.v(16, 16));
  for (int code : {0, 1, 2, 3, 4}) {
    const SamplePair twice = dihedral(dihedral(s, code), code);
    EXPECT_EQ(max_abs_diff(twice.image_b, s.image_b), 0.0);
    EXPECT_EQ(max_abs_diff(twice.flow.uv, s.flow.uv), 0.0);
  }
}

TEST(GeneratePair, RejectsMismatchedDimensions) {
  EXPECT_THROW(generate_pair(rgb_noise(32, 1), rgb_noise(40, 1), Tensor({1, 32, 32}), 0, {}), ValidationError);
  EXPECT_THROW(generate_pair(rgb_noise(32, 1), rgb_noise(32, 1), Tensor({1, 16, 32}), 0, {}), ValidationError);
}

TEST(GeneratePair, WarpingBackReproducesSourceOnSmoothImages) {
  const PixelGrid grid(96, 96);
  const Tensor b0 = testing::smooth_image(grid, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SamplePair s = generate_pair(b0, b0, Tensor({1, 96, 96}), seed, {});
    const WarpResult back = warp(s.image_b, s.flow);
    // A pixel is usable when its four bilinear neighbors in image_b were themselves covered.
    const WarpResult src_cover = warp(warp_affine(Tensor({1, 96, 96}, 1.0), s.transform).covered, s.flow);
    double err = 0.0;
    int count = 0;
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) {
        if (!s.flow.is_valid(y, x) || back.covered.at(0, y, x) == 0.0 || src_cover.values.at(0, y, x) < 1 - 1e-12)
          continue;
        for (int c = 0; c < 3; ++c) err += std::abs(back.values.at(c, y, x) - b0.at(c, y, x));
        count += 3;
      }
    ASSERT_GT(count, 0);
    EXPECT_LT(err / count, 2e-2) << "seed " << seed;
  }
}

TEST(ToyCorpus, NoChangedShapesGivesEmptyMask) {
  ToyCorpusOptions o;
  o.min_changes = o.max_changes = 0;
  const auto items = make_toy_corpus(1, 64, 5, o);
  ASSERT_EQ(items.size(), 1u);
  EXPECT_EQ(items[0].change.sum(), 0.0);
}

TEST(ToyCorpus, InsertedTenByTenRectangleMarksHundredPixels) {
  const Tensor bg = value_noise(64, 3, 1);
  ToyShape rect;
  rect.x0 = 20;
  rect.y0 = 30;
  rect.w = rect.h = 10;
  const ToyItem item = render_toy_pair(bg, bg, {}, {}, {rect});
  EXPECT_EQ(item.change.sum(), 100.0);
  EXPECT_EQ(max_abs_diff(item.image_a, bg), 0.0);
  EXPECT_EQ(item.image_b0.at(0, 35, 25), rect.color[0]);
}

TEST(ToyCorpus, SameSeedIsIdentical) {
  const auto a = make_toy_corpus(3, 64, 11);
  const auto b = make_toy_corpus(3, 64, 11);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].image_a.storage(), b[i].image_a.storage());
    EXPECT_EQ(a[i].image_b0.storage(), b[i].image_b0.storage());
    EXPECT_EQ(a[i].change.storage(), b[i].change.storage());
  }
  EXPECT_NE(make_toy_corpus(1, 64, 12)[0].image_a.storage(), a[0].image_a.storage());
}

TEST(ToyCorpus, ValuesInUnitRangeAndSizeValidated) {
  const ToyItem item = make_toy_item(32, 3);
  for (double v : item.image_a.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(make_toy_item(31, 3), ValidationError);
}

TEST(FlowFile, RoundTripIsBitExact) {
  testing::TempDir tmp;
  Rng rng(1);
  Tensor uv({2, 7, 5});
  for (double& v : uv.values()) v = static_cast<float>(rng.uniform(-50, 50));
  write_flow_file(tmp.path() / "f.flo", uv);
  EXPECT_EQ(fs::file_size(tmp.path() / "f.flo"), 12u + 8u * 7 * 5);
  const Tensor back = read_flow_file(tmp.path() / "f.flo");
  EXPECT_EQ(back.shape(), uv.shape());
  EXPECT_EQ(back.storage(), uv.storage());
  write_flow_file(tmp.path() / "g.flo", back);
  EXPECT_EQ(testing::file_bytes(tmp.path() / "f.flo"), testing::file_bytes(tmp.path() / "g.flo"));
}

TEST(FlowFile, HeaderLayout) {
  testing::TempDir tmp;
  Tensor uv({2, 3, 4});
  uv.at(0, 0, 0) = 1.5f;
  uv.at(1, 0, 0) = -2.0f;
  write_flow_file(tmp.path() / "f.flo", uv);
  const std::string b = testing::file_bytes(tmp.path() / "f.flo");
  EXPECT_EQ(b.substr(0, 4), "PIEH");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 4);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 3);
  float u, v;
  std::memcpy(&u, b.data() + 12, 4);
  std::memcpy(&v, b.data() + 16, 4);
  EXPECT_EQ(u, 1.5f);
  EXPECT_EQ(v, -2.0f);
}

TEST(FlowFile, TruncatedFileReportsExpectedAndActualSize) {
  testing::TempDir tmp;
  write_flow_file(tmp.path() / "f.flo", Tensor({2, 4, 4}));
  fs::resize_file(tmp.path() / "f.flo", 50);
  try {
    read_flow_file(tmp.path() / "f.flo");
    FAIL() << "expected a corruption error";
  } catch (const CorruptFileError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("size 50"), std::string::npos) << what;
    EXPECT_NE(what.find("expected 140"), std::string::npos) << what;
    EXPECT_EQ(e.offset(), 50u);
    EXPECT_EQ(e.exit_code(), 4);
  }
}

TEST(FlowFile, BadMagicIsRejected) {
  testing::TempDir tmp;
  std::ofstream(tmp.path() / "x.flo") << "NOPE00000000";
  EXPECT_THROW(read_flow_file(tmp.path() / "x.flo"), CorruptFileError);
}

TEST(FeatureFile, RoundTrip) {
  testing::TempDir tmp;
  Rng rng(4);
  Tensor f({5, 3, 2});
  for (double& v : f.values()) v = static_cast<float>(rng.normal());
  write_feature_file(tmp.path() / "f.fea", f);
  EXPECT_EQ(read_feature_file(tmp.path() / "f.fea").storage(), f.storage());
}

TEST(Png, MaskRoundTripIsIdentical) {
  testing::TempDir tmp;
  const ToyItem item = make_toy_item(64, 8);
  write_mask_png(tmp.path() / "m.png", item.change);
  EXPECT_EQ(read_mask_png(tmp.path() / "m.png").storage(), item.change.storage());
  const Tensor raw = read_png(tmp.path() / "m.png");
  for (double v : raw.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Png, ImageRoundTripWithinQuantization) {
  testing::TempDir tmp;
  const Tensor img = value_noise(20, 3, 9);
  write_png(tmp.path() / "i.png", img);
  const Tensor back = read_png(tmp.path() / "i.png");
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_LE(max_abs_diff(back, img), 0.5 / 255 + 1e-12);
}

TEST(Png, GarbageIsCorrupt) {
  testing::TempDir tmp;
  std::ofstream(tmp.path() / "bad.png") << "not a png at all";
  EXPECT_THROW(read_png(tmp.path() / "bad.png"), CorruptFileError);
  EXPECT_THROW(read_png(tmp.path() / "missing.png"), IoError);
}

TEST(Sample, WriteReadRoundTrip) {
  testing::TempDir tmp;
  const ToyItem item = make_toy_item(32, 2);
  SamplePair s = generate_pair(item.image_a, item.image_b0, item.change, 77, {});
  write_sample(tmp.path(), "000003", s);
  const SamplePair r = read_sample(tmp.path(), "000003");
  EXPECT_LE(max_abs_diff(r.image_a, s.image_a), 0.5 / 255 + 1e-12);
  EXPECT_LE(max_abs_diff(r.image_b, s.image_b), 0.5 / 255 + 1e-12);
  EXPECT_EQ(r.change.storage(), s.change.storage());
  EXPECT_EQ(r.flow.valid.storage(), s.flow.valid.storage());
  for (std::size_t i = 0; i < s.flow.uv.size(); ++i) EXPECT_EQ(r.flow.uv[i], static_cast<float>(s.flow.uv[i]));
  EXPECT_EQ(r.seed, 77u);
  EXPECT_EQ(r.transform.matrix(), s.transform.matrix());
  EXPECT_EQ(r.params.theta_deg, s.params.theta_deg);
}

TEST(Dataset, GenerationIsDeterministicAndComplete) {
  testing::TempDir tmp;
  GenerateOptions o;
  o.n = 4;
  o.size = 32;
  o.seed = 7;
  o.ranges = PerturbationRanges::translation(-8, 8);
  const DatasetManifest m1 = generate_dataset(tmp.path() / "one", o);
  const DatasetManifest m2 = generate_dataset(tmp.path() / "two", o);
  ASSERT_EQ(m1.records.size(), 4u);
  EXPECT_EQ(m1.config_hash, m2.config_hash);
  for (const auto& r : m1.records)
    for (const char* f : {"flow/%.flo", "mask/%.png", "valid/%.png", "a/%.png", "b/%.png"}) {
      std::string rel = f;
      rel.replace(rel.find('%'), 1, r.id);
      EXPECT_EQ(testing::file_bytes(tmp.path() / "one/train" / rel), testing::file_bytes(tmp.path() / "two/train" / rel))
          << rel;
    }
  const DatasetManifest read = read_manifest(tmp.path() / "one/train");
  EXPECT_EQ(read.records.size(), 4u);
  EXPECT_EQ(read.config_hash, m1.config_hash);
  EXPECT_EQ(read.ranges.dx.lo, -8.0);
  const auto samples = load_split(tmp.path() / "one", "train");
  ASSERT_EQ(samples.size(), 4u);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(samples[i].grid(), PixelGrid(32, 32));
    EXPECT_EQ(samples[i].transform.matrix(), read.records[i].matrix);
  }
}

TEST(Dataset, SplitsDrawIndependentSamples) {
  testing::TempDir tmp;
  GenerateOptions o;
  o.n = 1;
  o.size = 32;
  generate_dataset(tmp.path(), o);
  o.split = "test";
  generate_dataset(tmp.path(), o);
  EXPECT_NE(testing::file_bytes(tmp.path() / "train/a/000000.png"), testing::file_bytes(tmp.path() / "test/a/000000.png"));
}

TEST(Dataset, RejectsDegenerateScaleAndUnknownCorpus) {
  testing::TempDir tmp;
  GenerateOptions o;
  o.n = 1;
  o.size = 32;
  o.ranges.scale = {0, 2};
  EXPECT_THROW(generate_dataset(tmp.path(), o), ValidationError);
  o.ranges = {};
  o.corpus = "nope";
  EXPECT_THROW(generate_dataset(tmp.path(), o), UsageError);
  EXPECT_THROW(load_split(tmp.path(), "absent"), IoError);
}

TEST(Dataset, DirectoryCorpus) {
  testing::TempDir tmp;
  const fs::path c = tmp.path() / "corpus";
  for (const char* sub : {"a", "b", "mask"}) fs::create_directories(c / sub);
  const ToyItem item = make_toy_item(32, 1);
  write_png(c / "a/x.png", item.image_a);
  write_png(c / "b/x.png", item.image_b0);
  write_mask_png(c / "mask/x.png", item.change);
  GenerateOptions o;
  o.corpus = "dir";
  o.corpus_dir = c;
  o.n = 1;
  o.size = 32;
  const DatasetManifest m = generate_dataset(tmp.path() / "data", o);
  EXPECT_EQ(m.records.size(), 1u);
  const auto s = load_split(tmp.path() / "data", "train");
  EXPECT_EQ(s[0].change.storage(), item.change.storage());
}

}  // namespace
}  // namespace regcd

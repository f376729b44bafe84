#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace pren;
using testutil::randn;
using testutil::randu;

namespace {

struct Fixture {
  ParamStore<double> ps;
  Backbone<double> backbone;
  PyramidFusion<double> fusion;

  explicit Fixture(std::size_t d, std::uint64_t seed = 5) {
    Rng rng(seed);
    backbone = Backbone<double>(ps, rng, BackboneConfig::standard(d));
    fusion = PyramidFusion<double>(ps, rng, backbone.config());
  }
};

void expect_spatial(const Tensor<double>& t, std::size_t c, std::size_t h, std::size_t w) {
  ASSERT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(0), c);
  EXPECT_EQ(t.dim(1), h);
  EXPECT_EQ(t.dim(2), w);
}

}  // namespace

TEST(Backbone, DefaultChannelPlan) {
  auto cfg = BackboneConfig::standard(48);
  EXPECT_EQ(cfg.stem.channels, 16u);
  auto ch = cfg.tap_channels();
  EXPECT_EQ(ch[0], 32u);
  EXPECT_EQ(ch[1], 40u);
  EXPECT_EQ(ch[2], 48u);
  EXPECT_EQ(cfg.input_multiple(), 32u);
  EXPECT_EQ(cfg.stride_at(cfg.taps[0]), 8u);
  EXPECT_EQ(cfg.stride_at(cfg.taps[1]), 16u);
}

TEST(Backbone, HorizontalPyramidShapes) {
  Fixture fx(48);
  Rng rng(1);
  auto p = fx.backbone.extract_pyramid(randu(rng, {1, 64, 256}, 0, 1));
  expect_spatial(p.f3, 32, 8, 32);
  expect_spatial(p.f5, 40, 4, 16);
  expect_spatial(p.f7, 48, 2, 8);
}

TEST(Backbone, VerticalPyramidShapes) {
  Fixture fx(48);
  Rng rng(2);
  auto p = fx.backbone.extract_pyramid(randu(rng, {1, 256, 64}, 0, 1));
  expect_spatial(p.f3, 32, 32, 8);
  expect_spatial(p.f5, 40, 16, 4);
  expect_spatial(p.f7, 48, 8, 2);
}

TEST(Backbone, StrideContractOnRandomSizes) {
  Fixture fx(12);
  Rng rng(9);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t h = 32 * (1 + rng.below(4));
    const std::size_t w = 32 * (1 + rng.below(4));
    auto p = fx.backbone.extract_pyramid(randu(rng, {1, h, w}, 0, 1));
    expect_spatial(p.f3, 8, h / 8, w / 8);
    expect_spatial(p.f5, 10, h / 16, w / 16);
    expect_spatial(p.f7, 12, h / 32, w / 32);
  }
}

TEST(Backbone, ZeroImageGivesZeroPyramid) {
  Fixture fx(48);
  auto p = fx.backbone.extract_pyramid(Tensor<double>::zeros({1, 64, 256}));
  for (const auto* t : {&p.f3, &p.f5, &p.f7})
    for (double v : t->data()) ASSERT_EQ(v, 0.0);
}

TEST(Backbone, DeterministicForFixedParams) {
  Fixture a(12, 3), b(12, 3);
  Rng rng(4);
  auto img = randu(rng, {1, 64, 64}, 0, 1);
  auto pa = a.backbone.extract_pyramid(img);
  auto pb = b.backbone.extract_pyramid(img);
  EXPECT_TRUE(std::equal(pa.f7.data().begin(), pa.f7.data().end(), pb.f7.data().begin()));
}

TEST(Backbone, IndivisibleExtentIsConfigError) {
  Fixture fx(12);
  EXPECT_THROW(fx.backbone.extract_pyramid(Tensor<double>::zeros({1, 64, 250})), ConfigError);
  EXPECT_THROW(fx.backbone.extract_pyramid(Tensor<double>::zeros({1, 48, 256})), ConfigError);
  EXPECT_THROW(fx.backbone.extract_pyramid(Tensor<double>::zeros({2, 64, 256})), DimensionError);
}

TEST(Backbone, InvalidPlansRejected) {
  auto c = BackboneConfig::standard(48);
  c.taps = {2, 1, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  auto odd = BackboneConfig::standard(48);
  odd.blocks[4].channels = 50;
  odd.blocks[3].channels = 50;
  EXPECT_THROW(odd.validate(), ConfigError);
}

TEST(Fusion, OutputHasF3ResolutionAndDChannels) {
  Fixture fx(48);
  Rng rng(1);
  auto f = fx.fusion(fx.backbone.extract_pyramid(randu(rng, {1, 64, 256}, 0, 1)));
  expect_spatial(f, 48, 8, 32);
}

TEST(Fusion, ZeroPyramidGivesZeroMap) {
  Fixture fx(12);
  FeaturePyramid<double> p{Tensor<double>::zeros({8, 8, 8}), Tensor<double>::zeros({10, 4, 4}),
                           Tensor<double>::zeros({12, 2, 2})};
  auto f = fx.fusion(p);
  for (double v : f.data()) ASSERT_EQ(v, 0.0);
}

TEST(Fusion, ReducesToDoubleUpsampleOfF7) {
  Fixture fx(12);
  Rng rng(7);
  auto f7 = randn(rng, {12, 2, 3});
  FeaturePyramid<double> p{Tensor<double>::zeros({8, 8, 12}), Tensor<double>::zeros({10, 4, 6}), f7};
  auto out = fx.fusion(p);
  expect_spatial(out, 12, 8, 12);
  std::vector<double> expect(12 * 8 * 12);
  for (std::size_t c = 0; c < 12; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 12; ++x) expect[(c * 8 + y) * 12 + x] = f7.data()[(c * 2 + y / 4) * 3 + x / 4];
  EXPECT_EQ(testutil::max_abs_diff(out, expect), 0.0);
}

TEST(Fusion, LinearInEachLevel) {
  Fixture fx(12);
  Rng rng(8);
  auto level = [&](std::size_t c, std::size_t h, std::size_t w) { return randn(rng, {c, h, w}); };
  FeaturePyramid<double> a{level(8, 8, 8), level(10, 4, 4), level(12, 2, 2)};
  FeaturePyramid<double> b{level(8, 8, 8), level(10, 4, 4), level(12, 2, 2)};
  FeaturePyramid<double> s{add(a.f3, b.f3), add(a.f5, b.f5), add(a.f7, b.f7)};
  auto fa = fx.fusion(a), fb = fx.fusion(b), fs = fx.fusion(s);
  auto sum = add(fa, fb);
  EXPECT_LT(testutil::max_abs_diff(fs.data(), sum.data()), 1e-12);
}

TEST(Fusion, MismatchedLevelsRejected) {
  Fixture fx(12);
  FeaturePyramid<double> p{Tensor<double>::zeros({8, 8, 8}), Tensor<double>::zeros({10, 4, 4}),
                           Tensor<double>::zeros({12, 3, 2})};
  EXPECT_THROW(fx.fusion(p), DimensionError);
}

TEST(Backbone, DeepPlanKeepsStridesAndTaps) {
  auto deep = BackboneConfig::deep(48), standard = BackboneConfig::standard(48);
  EXPECT_EQ(deep.tap_channels(), standard.tap_channels());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(deep.stride_at(deep.taps[i]), standard.stride_at(standard.taps[i]));
  EXPECT_GT(deep.blocks.size(), standard.blocks.size());
}

TEST(AppendCoords, PlanesSpanUnitInterval) {
  Rng rng(3);
  auto img = randu(rng, {1, 4, 5}, 0, 1);
  auto x = append_coords(img);
  expect_spatial(x, 3, 4, 5);
  EXPECT_TRUE(std::equal(img.data().begin(), img.data().end(), x.data().begin()));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_DOUBLE_EQ(x.data()[20 + r * 5 + c], -1.0 + 0.5 * static_cast<double>(c));
      EXPECT_DOUBLE_EQ(x.data()[40 + r * 5 + c], -1.0 + 2.0 * static_cast<double>(r) / 3.0);
    }
}

TEST(Backbone, CoordinatePlanesBreakTranslationSymmetry) {
  ParamStore<double> ps;
  Rng rng(6);
  auto cfg = BackboneConfig::standard(12);
  cfg.coords = true;
  Backbone<double> bb(ps, rng, cfg);
  EXPECT_EQ(ps.at("backbone.stem.w").dim(1), 3u);
  auto p = bb.extract_pyramid(Tensor<double>::zeros({1, 64, 256}));
  expect_spatial(p.f7, 12, 2, 8);
  // A blank image still yields column-dependent features.
  auto f7 = p.f7;
  const std::size_t w = f7.dim(2);
  double spread = 0;
  for (std::size_t c = 0; c < f7.dim(0); ++c)
    spread = std::max(spread, std::abs(f7.data()[c * 2 * w + 1] - f7.data()[c * 2 * w + w - 2]));
  EXPECT_GT(spread, 1e-6);
  EXPECT_THROW(bb.extract_pyramid(Tensor<double>::zeros({3, 64, 256})), DimensionError);
}

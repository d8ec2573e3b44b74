#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "vins/error.hpp"
#include "vins/pairing.hpp"

using namespace vins;

namespace {

Frame random_frame(int h, int w, Rng& rng) {
  return Frame(vins::testing::random_tensor({3, h, w}, rng, 0.0, 1.0), 0);
}

const Dataset& sprites() {
  static const Dataset ds = generate_sprite_dataset({.n_videos = 3, .n_frames = 16, .seed = 21});
  return ds;
}

}  // namespace

TEST(Mask, DefaultRectangleOnDefaultPatch) {
  const BinaryMask m = make_mask(PatchSpec{128, 64});
  EXPECT_EQ(m.count(), 96u * 32u);
  EXPECT_EQ(m.at(16, 16), 1);
  EXPECT_EQ(m.at(15, 16), 0);
  EXPECT_EQ(m.at(111, 47), 1);
  EXPECT_EQ(m.at(112, 47), 0);
  EXPECT_EQ(m.at(16, 48), 0);
}

TEST(Mask, CountFollowsRoundingRule) {
  const PatchSpec spec{40, 24};
  for (double f : {0.1, 0.33, 0.5, 0.77, 0.95, 0.999}) {
    const BinaryMask m = make_mask(spec, {f, 1.0 - f / 2});
    EXPECT_EQ(static_cast<long>(m.count()), std::lround(f * 24) * std::lround((1.0 - f / 2) * 40));
  }
}

TEST(Mask, SymmetricUnderFlips) {
  const PatchSpec spec{64, 32};
  for (const MaskCoverage c : {MaskCoverage{}, MaskCoverage{0.25, 0.5}, MaskCoverage{0.75, 0.125}}) {
    const BinaryMask m = make_mask(spec, c);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        EXPECT_EQ(m.at(y, x), m.at(m.height - 1 - y, x));
        EXPECT_EQ(m.at(y, x), m.at(y, m.width - 1 - x));
      }
  }
}

TEST(Mask, FractionsOutsideOpenIntervalRejected) {
  EXPECT_THROW(make_mask(PatchSpec{}, {0.0, 0.5}), ValidationError);
  EXPECT_THROW(make_mask(PatchSpec{}, {0.5, 1.0}), ValidationError);
  EXPECT_THROW(make_mask(PatchSpec{}, {-0.1, 0.5}), ValidationError);
}

TEST(Blend, ZeroMaskGivesRegion) {
  Rng rng(1);
  const Frame u = random_frame(16, 16, rng), r = random_frame(16, 16, rng);
  EXPECT_EQ(blend(u, r, BinaryMask(16, 16, 0)).pixels, r.pixels);
}

TEST(Blend, EqualInputsAreFixedPoint) {
  Rng rng(2);
  const Frame u = random_frame(16, 16, rng);
  const Frame out = blend(u, u, make_mask(PatchSpec{16, 16}));
  EXPECT_LT(max_abs_diff(out.pixels, u.pixels), 1e-15);
}

TEST(Blend, WhiteOverBlack) {
  const PatchSpec spec{16, 16};
  const BinaryMask m = make_mask(spec);
  const Frame out = blend(Frame::filled(16, 16, 1.0), Frame::filled(16, 16, 0.0), m);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) EXPECT_EQ(out.at(c, y, x), m.at(y, x) ? 0.5 : 0.0);
}

TEST(Blend, AffineInObjectArgument) {
  Rng rng(3);
  const BinaryMask m = make_mask(PatchSpec{16, 16});
  for (int trial = 0; trial < 20; ++trial) {
    const Frame u = random_frame(16, 16, rng), u2 = random_frame(16, 16, rng), r = random_frame(16, 16, rng);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    Tensor mix(u.pixels.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * u.pixels[i] + b * u2.pixels[i];
    const Frame lhs = blend(Frame(mix, 0), r, m);
    const Frame bu = blend(u, r, m), bu2 = blend(u2, r, m);
    double worst = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const double rhs = a * bu.at(c, y, x) + b * bu2.at(c, y, x) -
                             (a + b - 1.0) * r.at(c, y, x) * (1.0 - m.at(y, x) / 2.0);
          worst = std::max(worst, std::abs(lhs.at(c, y, x) - rhs));
        }
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(Blend, SizeMismatchRejected) {
  EXPECT_THROW(blend(Frame::filled(16, 16, 0), Frame::filled(16, 18, 0), BinaryMask(16, 16)), ValidationError);
  EXPECT_THROW(blend(Frame::filled(16, 16, 0), Frame::filled(16, 16, 0), BinaryMask(8, 16)), ValidationError);
}

TEST(Batch, PairsFollowTheirDefinitions) {
  const auto& ds = sprites();
  const BatchOptions opt{.patch = {64, 32}};
  const TrainingBatch b = make_training_batch(ds.videos[0], ds.videos[1], {40, 30, 16, 32}, 5, opt);
  b.validate();
  EXPECT_EQ(b.fake_b.kind, PairKind::FakeB);
  ASSERT_TRUE(b.fake_b.target.has_value());
  EXPECT_EQ(b.fake_b.input.pixels, blend(*b.fake_b.target, b.src.r_b, b.mask).pixels);
  EXPECT_EQ(b.fake_b.target->pixels, b.src.u_b.pixels);
  EXPECT_EQ(b.fake_a.input.pixels, blend(b.src.u_b, b.src.r_a, b.mask).pixels);
  EXPECT_EQ(b.real.input.pixels, blend(b.src.u_a, b.src.r_b, b.mask).pixels);
  EXPECT_FALSE(b.real.target.has_value());
  EXPECT_EQ(b.src.region_b, (BoundingBox{40, 30, 16, 32}));
  ASSERT_TRUE(b.src.object_mask_a.has_value());
  EXPECT_GT(b.src.object_mask_a->count(), 0u);
  for (const auto* p : {&b.real, &b.fake_a, &b.fake_b})
    for (double v : p->input.pixels.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Batch, DeterministicPerSeed) {
  const auto& ds = sprites();
  const BatchOptions opt{.patch = {64, 32}};
  const auto b1 = make_training_batch(ds.videos[0], ds.videos[2], {40, 30, 16, 32}, 9, opt);
  const auto b2 = make_training_batch(ds.videos[0], ds.videos[2], {40, 30, 16, 32}, 9, opt);
  EXPECT_EQ(b1.real.input.pixels, b2.real.input.pixels);
  EXPECT_EQ(b1.fake_a.input.pixels, b2.fake_a.input.pixels);
  EXPECT_EQ(b1.fake_b.input.pixels, b2.fake_b.input.pixels);
  Rng r1(4), r2(4);
  EXPECT_EQ(sample_training_batch(ds.videos[1], ds.videos[2], r1, opt).real.input.pixels,
            sample_training_batch(ds.videos[1], ds.videos[2], r2, opt).real.input.pixels);
}

TEST(Batch, EmptyDatasetRejected) {
  const auto& ds = sprites();
  VideoData empty = ds.videos[0];
  empty.tracks.clear();
  EXPECT_THROW(make_training_batch(empty, ds.videos[1], {40, 30, 16, 32}, 1), ValidationError);
  EXPECT_THROW(make_training_batch(ds.videos[1], empty, {40, 30, 16, 32}, 1), ValidationError);
}

TEST(Batch, SequencesTrackObjectsAndShareMask) {
  const auto& ds = sprites();
  Rng rng(6);
  const BatchOptions opt{.patch = {64, 32}};
  const SequenceBatch s = sample_sequence_batch(ds.videos[0], ds.videos[1], 6, rng, opt);
  ASSERT_EQ(s.length(), 6u);
  for (const auto& st : s.steps) {
    st.validate();
    EXPECT_EQ(st.mask, s.steps[0].mask);
    EXPECT_EQ(st.fake_b.input.pixels, blend(*st.fake_b.target, st.src.r_b, st.mask).pixels);
    EXPECT_TRUE(ds.videos[1].roi.contains_point(st.src.region_b.cx(), st.src.region_b.cy()));
  }
  EXPECT_EQ(s.inputs(PairKind::Real).size(), 6u);
  EXPECT_THROW(s.targets(PairKind::Real), ValidationError);
  EXPECT_THROW(sample_sequence_batch(ds.videos[0], ds.videos[1], 100, rng, opt), ValidationError);
}

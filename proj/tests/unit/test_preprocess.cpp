#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "celmnav/error.hpp"
#include "celmnav/imagery.hpp"
#include "celmnav/preprocess.hpp"
#include "oracles.hpp"

using namespace celmnav;
using Eigen::Vector2d;

namespace {

LabelSet some_labels() {
  LabelSet l;
  l.strategy = LabelStrategy::DeltaRange;
  l.cob = {120, 230};
  l.cof = {126, 228};
  l.delta = l.cof - l.cob;
  l.range = 20.0;
  l.position = {3, -4, 12};
  l.azimuth_deg = 33;
  l.elevation_deg = -7;
  return l;
}

PreprocessRecord record_with_gamma(int gamma) {
  PreprocessRecord r;
  r.gamma = gamma;
  r.blob.box = {10, 20, gamma / 2, gamma / 2};
  return r;
}

}  // namespace

TEST(Otsu, SeparatesTwoLevels) {
  GrayImage img(10, 10, 0.1f);
  for (int v = 5; v < 10; ++v)
    for (int u = 0; u < 10; ++u) img.at(u, v) = 0.9f;
  const Threshold t = otsu_threshold(img);
  EXPECT_GT(t.level(), 0.1);
  EXPECT_LT(t.level(), 0.9);
}

TEST(Otsu, TwoGaussianModesMatchExhaustiveScan) {
  std::array<double, 256> hist{};
  for (int k = 0; k < 256; ++k) {
    const double x = k / 255.0;
    hist[k] = std::exp(-0.5 * std::pow((x - 0.2) / 0.03, 2)) + std::exp(-0.5 * std::pow((x - 0.8) / 0.03, 2));
  }
  const Threshold t = otsu_threshold(std::span<const double, 256>(hist));
  EXPECT_GE(t.level(), 0.4);
  EXPECT_LE(t.level(), 0.6);

  double best = -1;
  int arg = -1;
  for (int cut = 0; cut < 255; ++cut) {
    double w0 = 0, m0 = 0, w1 = 0, m1 = 0;
    for (int k = 0; k < 256; ++k) (k <= cut ? w0 : w1) += hist[k], (k <= cut ? m0 : m1) += k * hist[k];
    if (w0 == 0 || w1 == 0) continue;
    const double v = w0 * w1 * std::pow(m0 / w0 - m1 / w1, 2);
    if (v > best) best = v, arg = cut;
  }
  EXPECT_EQ(t.bin, arg);
}

TEST(Otsu, ConstantImagesAreDegenerate) {
  EXPECT_EQ(otsu_threshold(GrayImage(8, 8, 0.0f)).bin, 0);
  const Threshold t = otsu_threshold(GrayImage(8, 8, 0.5f));
  EXPECT_EQ(t.bin, to_8bit(0.5f));
  EXPECT_THROW(blob_analysis(GrayImage(8, 8, 0.5f), t), EmptyBlobError);
}

TEST(Blob, SinglePixel) {
  GrayImage img(40, 40);
  img.at(10, 20) = 1.0f;
  const BlobResult b = blob_analysis(img, otsu_threshold(img));
  EXPECT_EQ(b.cob, Vector2d(10, 20));
  EXPECT_EQ(b.box, (BoundingBox{10, 20, 1, 1}));
}

TEST(Blob, UniformRectangle) {
  GrayImage img(16, 16);
  for (int v = 2; v <= 9; ++v)
    for (int u = 4; u <= 7; ++u) img.at(u, v) = 0.7f;
  const BlobResult b = blob_analysis(img, otsu_threshold(img));
  EXPECT_NEAR(b.cob.x(), 5.5, 1e-12);
  EXPECT_NEAR(b.cob.y(), 5.5, 1e-12);
  EXPECT_EQ(b.box.width, 4);
  EXPECT_EQ(b.box.height, 8);
}

TEST(Blob, RenderedHalfLitSphereMatchesCentroidOracle) {
  const CameraModel cam;
  BodyModel body;
  body = scale_to_fov(body, cam);
  ViewpointSample v;
  v.range_km = 8;
  v.azimuth_deg = 90;
  const RenderResult r = render(body, cam, v, Eigen::Vector3d::UnitX());
  const BlobResult b = blob_analysis(r.image, otsu_threshold(r.image));
  EXPECT_LT((b.cob - oracle::centroid_above(r.image, b.threshold.bin)).norm(), 1e-6);
  // CoB lies inside the box.
  EXPECT_GE(b.cob.x(), b.box.u);
  EXPECT_LE(b.cob.x(), b.box.u + b.box.width - 1);
  EXPECT_GE(b.cob.y(), b.box.v);
  EXPECT_LE(b.cob.y(), b.box.v + b.box.height - 1);
}

TEST(Gamma, SmallestAdmissibleSize) {
  EXPECT_EQ(select_gamma({0, 0, 1, 1}), 128);
  EXPECT_EQ(select_gamma({0, 0, 128, 3}), 128);
  EXPECT_EQ(select_gamma({0, 0, 129, 3}), 256);
  EXPECT_EQ(select_gamma({0, 0, 10, 1024}), 1024);
  EXPECT_THROW(select_gamma({0, 0, 1025, 3}), Error);
}

TEST(ToS1, ShiftsCentersByCropAndPad) {
  const GrayImage img(1024, 1024);
  BlobResult blob;
  blob.box = {100, 200, 50, 60};
  const S1Result s1 = to_s1_with_offsets(img, some_labels(), blob, 0, 0);
  EXPECT_EQ(s1.labels.cob, Vector2d(20, 30));
  EXPECT_EQ(s1.labels.delta, some_labels().delta);
  EXPECT_EQ(s1.labels.range, 20.0);
  EXPECT_EQ(s1.image.width(), 128);
  EXPECT_THROW(to_s1_with_offsets(img, some_labels(), blob, 79, 0), Error);
}

TEST(ToS1, PadReusesSensorPixelsAndZeroFillsOutside) {
  GrayImage img(300, 300);
  for (int v = 0; v < 300; ++v)
    for (int u = 0; u < 300; ++u) img.at(u, v) = static_cast<float>((u + 3 * v) % 7) / 7.0f;
  BlobResult blob;
  blob.box = {5, 100, 40, 40};
  const S1Result s1 = to_s1_with_offsets(img, some_labels(), blob, 20, 30);
  // S1 pixel (x, y) maps to S0 (x + 5 - 20, y + 100 - 30).
  for (int y = 0; y < 128; y += 9)
    for (int x = 0; x < 128; x += 5) {
      const int u = x - 15, v = y + 70;
      const float expected = img.contains(u, v) ? img.at(u, v) : 0.0f;
      EXPECT_EQ(s1.image.at(x, y), expected) << x << "," << y;
    }
}

TEST(ToS1, OffsetsStayInRange) {
  const GrayImage img(1024, 1024);
  BlobResult blob;
  blob.box = {400, 400, 130, 130};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const S1Result s1 = to_s1(img, some_labels(), blob, seed);
    ASSERT_EQ(s1.record.gamma, 256);
    ASSERT_GE(s1.record.alpha_u, 0);
    ASSERT_LE(s1.record.alpha_u, 126);
    ASSERT_GE(s1.record.alpha_v, 0);
    ASSERT_LE(s1.record.alpha_v, 126);
  }
}

TEST(ToS2, ScalesByGamma) {
  LabelSet l = some_labels();
  l.delta = {10, -4};
  const S2Sample s = to_s2(GrayImage(256, 256), l, record_with_gamma(256), std::nullopt);
  EXPECT_EQ(s.labels.delta, Vector2d(5, -2));
  EXPECT_EQ(s.image.width(), 128);

  LabelSet r = some_labels();
  const S2Sample s512 = to_s2(GrayImage(512, 512), r, record_with_gamma(512), std::nullopt);
  EXPECT_DOUBLE_EQ(s512.labels.range, 5.0);
  EXPECT_DOUBLE_EQ(s512.labels.azimuth_deg, r.azimuth_deg);
}

TEST(ToS2, IdentityAtGamma128) {
  const LabelSet l = some_labels();
  const S2Sample s = to_s2(GrayImage(128, 128, 0.25f), l, record_with_gamma(128), std::nullopt);
  EXPECT_EQ(s.labels.cob, l.cob);
  EXPECT_EQ(s.labels.delta, l.delta);
  EXPECT_EQ(s.labels.range, l.range);
  EXPECT_EQ(s.labels.position, l.position);
  EXPECT_EQ(s.image, GrayImage(128, 128, 0.25f));
}

TEST(ToS2, NoiseIsSeededAndClipped) {
  const PreprocessRecord rec = record_with_gamma(128);
  NoiseSpec n;
  n.seed = 5;
  const S2Sample a = to_s2(GrayImage(128, 128), some_labels(), rec, n);
  const S2Sample b = to_s2(GrayImage(128, 128), some_labels(), rec, n);
  EXPECT_EQ(a.image, b.image);
  EXPECT_TRUE(a.record.noise_applied);
  for (float p : a.image.pixels()) {
    ASSERT_GE(p, 0.0f);
    ASSERT_LE(p, 1.0f);
  }
}

TEST(Invert, RoundTripAndPositionScaling) {
  for (int gamma : kPadSizes) {
    const PreprocessRecord rec = record_with_gamma(gamma);
    const LabelSet l = some_labels();
    const S2Sample s = to_s2(GrayImage(gamma, gamma), l, rec, std::nullopt);
    const LabelSet back = invert_labels(s.labels, rec);
    EXPECT_NEAR((back.cob - l.cob).norm(), 0, 1e-9);
    EXPECT_NEAR((back.delta - l.delta).norm(), 0, 1e-9);
    EXPECT_NEAR(back.range - l.range, 0, 1e-9);
    EXPECT_NEAR((back.position - l.position).norm(), 0, 1e-9);
  }
  LabelSet xyz;
  xyz.position = {1, 2, 3};
  EXPECT_EQ(invert_labels(xyz, record_with_gamma(512)).position, Eigen::Vector3d(4, 8, 12));
}

TEST(Resize, PreservesIntensityCentroidUpToScale) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0, 1);
  for (int side : {256, 512}) {
    GrayImage img(side, side);
    for (int v = side / 4; v < side / 2; ++v)
      for (int x = side / 3; x < 3 * side / 4; ++x) img.at(x, v) = u(rng);
    const GrayImage small = resize_square(img, 128);
    const Vector2d c0 = oracle::centroid_above(img, -1);
    const Vector2d c2 = oracle::centroid_above(small, -1);
    const double s = 128.0 / side;
    EXPECT_LT((c2 - c0 * s).norm(), 0.6) << side;
  }
}

TEST(Pipeline, LabelsToS2AgreesWithForwardTransform) {
  const CameraModel cam;
  const BodyModel body = body_preset("L", cam);
  for (const auto& v : sample_cloud(4, 21)) {
    const RenderResult r = render(body, cam, v, v.sun_w);
    const LabelSet l0 = labels_for(r.truth, LabelStrategy::WSpherical);
    const S2Sample s = preprocess_image(r.image, l0, 99);
    const LabelSet l2 = labels_to_s2(l0, s.record);
    EXPECT_LT((l2.cob - s.labels.cob).norm(), 1e-9);
    EXPECT_LT((l2.cof - s.labels.cof).norm(), 1e-9);
    EXPECT_NEAR(l2.range, s.labels.range, 1e-12);
    EXPECT_EQ(s.record.gamma, select_gamma(s.record.blob.box));
    // Label CoB is the blob CoB of the S0 image.
    EXPECT_LT((r.truth.cob - s.record.blob.cob).norm(), 1e-9);
    const BlobResult again = blob_analysis(s.image, s.record.blob.threshold);
    EXPECT_LT((again.cob - s.labels.cob).norm(), 1.5);
  }
}

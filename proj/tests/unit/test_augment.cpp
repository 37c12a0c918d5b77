#include <gtest/gtest.h>

#include <opencv2/core.hpp>

#include "retseg/dataset.hpp"
#include "retseg/errors.hpp"

using namespace retseg::dataset;

namespace {

RetinalSample delta_sample(int size, int x, int y) {
  RetinalSample s;
  s.id = "delta";
  s.image = cv::Mat::zeros(size, size, CV_32FC3);
  s.image.at<cv::Vec3f>(y, x) = cv::Vec3f(1.0f, 1.0f, 1.0f);
  cv::Mat m = cv::Mat::zeros(size, size, CV_8UC1);
  m.at<std::uint8_t>(y, x) = 1;
  s.vessel_mask = m;
  s.fov_mask = cv::Mat::ones(size, size, CV_8UC1);
  return s;
}

cv::Point argmax(const cv::Mat& m) {
  cv::Mat single;
  if (m.channels() == 3) {
    cv::extractChannel(m, single, 0);
  } else {
    single = m;
  }
  cv::Mat f;
  single.convertTo(f, CV_64F);
  cv::Point loc;
  cv::minMaxLoc(f, nullptr, nullptr, nullptr, &loc);
  return loc;
}

AugmentationSpec geometry_only() {
  AugmentationSpec s = AugmentationSpec::identity_transform();
  return s;
}

bool equal(const cv::Mat& a, const cv::Mat& b) { return cv::norm(a, b, cv::NORM_INF) == 0.0; }

}  // namespace

TEST(Augment, DisabledAndIdentityLeaveSampleUntouched) {
  const RetinalSample s = delta_sample(9, 2, 5);
  for (const auto& spec : {AugmentationSpec::disabled(), AugmentationSpec::identity_transform()}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto out = augment(s, spec, seed);
      EXPECT_TRUE(equal(out.image, s.image));
      EXPECT_TRUE(equal(*out.vessel_mask, *s.vessel_mask));
      EXPECT_TRUE(equal(out.fov_mask, s.fov_mask));
    }
  }
}

TEST(Augment, HorizontalFlipIsAnInvolution) {
  AugmentationSpec spec = geometry_only();
  spec.horizontal_flip = true;
  spec.flip_probability = 1.0;
  const RetinalSample s = delta_sample(8, 1, 3);
  const auto once = augment(s, spec, 1);
  EXPECT_EQ(argmax(*once.vessel_mask), cv::Point(6, 3));
  const auto twice = augment(once, spec, 2);
  EXPECT_TRUE(equal(twice.image, s.image));
  EXPECT_TRUE(equal(*twice.vessel_mask, *s.vessel_mask));
}

TEST(Augment, QuarterTurnMatchesHandCoordinates) {
  // A +90 degree turn about the centre c of a 5x5 grid sends (x, y) to
  // (y, 2c - x) in image coordinates.
  AugmentationSpec spec = geometry_only();
  spec.rotation_degrees = {90.0, 90.0};
  const auto out = augment(delta_sample(5, 1, 0), spec, 3);
  EXPECT_EQ(argmax(*out.vessel_mask), cv::Point(0, 3));
  EXPECT_EQ(argmax(out.image), cv::Point(0, 3));
}

TEST(Augment, ImageAndMaskStayAligned) {
  AugmentationSpec spec;
  spec.brightness = spec.contrast = {0.0, 0.0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RetinalSample s = delta_sample(33, 10 + static_cast<int>(seed % 5), 14);
    // Spread the delta so bilinear sampling keeps a clear peak.
    RetinalSample wide = s;
    cv::Mat blob = cv::Mat::zeros(33, 33, CV_8UC1);
    cv::Mat img = cv::Mat::zeros(33, 33, CV_32FC3);
    const cv::Point c = argmax(*s.vessel_mask);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        blob.at<std::uint8_t>(c.y + dy, c.x + dx) = 1;
        const float v = (dx == 0 && dy == 0) ? 1.0f : 0.5f;
        img.at<cv::Vec3f>(c.y + dy, c.x + dx) = cv::Vec3f(v, v, v);
      }
    wide.vessel_mask = blob;
    wide.image = img;
    const auto out = augment(wide, spec, seed);
    const cv::Point pi = argmax(out.image);
    ASSERT_EQ(out.vessel_mask->at<std::uint8_t>(pi.y, pi.x), 1) << "seed " << seed;
  }
}

TEST(Augment, SeededReproducibility) {
  const RetinalSample s = delta_sample(16, 4, 7);
  const AugmentationSpec spec;
  const auto a = augment(s, spec, 42);
  const auto b = augment(s, spec, 42);
  EXPECT_TRUE(equal(a.image, b.image));
  EXPECT_TRUE(equal(*a.vessel_mask, *b.vessel_mask));
  bool differs = false;
  for (std::uint64_t seed = 43; seed < 50 && !differs; ++seed) differs = !equal(augment(s, spec, seed).image, a.image);
  EXPECT_TRUE(differs);
}

TEST(Augment, MasksStayBinary) {
  const RetinalSample s = delta_sample(16, 4, 7);
  const auto out = augment(s, AugmentationSpec{}, 5);
  EXPECT_NO_THROW(validate_sample(out));
}

TEST(Augment, JsonRoundTrip) {
  AugmentationSpec spec;
  spec.rotation_degrees = {-5.0, 7.5};
  spec.enabled = false;
  const auto back = augmentation_from_json(to_json(spec));
  EXPECT_EQ(back.rotation_degrees.hi, 7.5);
  EXPECT_FALSE(back.enabled);
  EXPECT_THROW(augmentation_from_json({{"scale", {2.0, 1.0}}}), retseg::ConfigError);
}

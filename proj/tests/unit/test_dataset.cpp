#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include <opencv2/core.hpp>

#include "retseg/dataset.hpp"
#include "retseg/errors.hpp"
#include "retseg/image_io.hpp"
#include "support/fixtures.hpp"

using namespace retseg;
using namespace retseg::dataset;
using retseg::testing::TempDir;
namespace fs = std::filesystem;

namespace {

RetinalSample make_sample(int h, int w, std::uint64_t seed, bool labeled = true) {
  RetinalSample s;
  s.id = "s" + std::to_string(seed);
  s.image = cv::Mat(h, w, CV_32FC3);
  cv::theRNG().state = seed + 1;
  cv::randu(s.image, 0.0f, 1.0f);
  s.fov_mask = cv::Mat::ones(h, w, CV_8UC1);
  if (labeled) {
    cv::Mat m(h, w, CV_8UC1);
    cv::randu(m, 0, 2);
    s.vessel_mask = m;
  }
  return s;
}

bool mats_equal(const cv::Mat& a, const cv::Mat& b) {
  return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0.0;
}

}  // namespace

TEST(Drive, LoadsFixtureInFilenameOrder) {
  TempDir dir("drive");
  retseg::testing::write_drive_fixture(dir.path(), 3, 2, 5, 64, 48);
  const auto train = load_drive_dataset(dir.path(), Split::train);
  ASSERT_EQ(train.size(), 3u);
  EXPECT_EQ(train.samples[0].id, "21");
  EXPECT_EQ(train.samples[2].id, "23");
  for (const auto& s : train.samples) {
    EXPECT_EQ(s.width(), 64);
    EXPECT_EQ(s.height(), 48);
    ASSERT_TRUE(s.labeled());
    EXPECT_NO_THROW(validate_sample(s));
    EXPECT_GT(cv::countNonZero(*s.vessel_mask), 0);
    EXPECT_GT(cv::countNonZero(s.fov_mask), 0);
  }
  const auto test = load_drive_dataset(dir.path(), Split::test);
  ASSERT_EQ(test.size(), 2u);
  EXPECT_EQ(test.samples[0].id, "01");
  EXPECT_EQ(test.split, Split::test);
}

TEST(Drive, LayoutErrors) {
  TempDir dir("drive");
  EXPECT_THROW(load_drive_dataset(dir / "nope", Split::train), DatasetLayoutError);
  EXPECT_THROW(load_drive_dataset(dir.path(), Split::train), DatasetLayoutError);
  retseg::testing::write_drive_fixture(dir.path(), 2, 1, 1, 32, 32);
  fs::remove_all(dir / "test/mask");
  EXPECT_THROW(load_drive_dataset(dir.path(), Split::test), DatasetLayoutError);
  for (const auto& e : fs::directory_iterator(dir / "training/images")) fs::remove(e.path());
  EXPECT_THROW(load_drive_dataset(dir.path(), Split::train), DatasetLayoutError);
}

TEST(Drive, ShapeMismatchIsIntegrityError) {
  TempDir dir("drive");
  retseg::testing::write_drive_fixture(dir.path(), 2, 1, 1, 32, 32);
  retseg::testing::write_mask_gif(dir / "training/1st_manual/22_manual1.gif", cv::Mat::ones(16, 16, CV_8UC1));
  try {
    load_drive_dataset(dir.path(), Split::train);
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("22"), std::string::npos);
  }
}

TEST(Synthetic, CorruptFilesAreSkippedWithWarnings) {
  TempDir dir("synth");
  for (int i = 0; i < 5; ++i) {
    const fs::path p = dir / ("img" + std::to_string(i) + ".png");
    if (i == 1 || i == 3) {
      std::ofstream(p) << "corrupt";
    } else {
      io::write_rgb_png16(p, make_sample(20, 24, i).image);
    }
  }
  const auto m = load_synthetic_images(dir.path());
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.warnings.size(), 2u);
  for (const auto& s : m.samples) {
    EXPECT_EQ(s.source, Source::synthetic);
    EXPECT_FALSE(s.labeled());
    EXPECT_EQ(cv::countNonZero(s.fov_mask), 20 * 24);
  }
}

TEST(Synthetic, SingleImageGetsFullFov) {
  TempDir dir("synth");
  io::write_rgb_png16(dir / "only.png", make_sample(10, 10, 3).image);
  const auto m = load_synthetic_images(dir.path(), {"stylegan2", 0.7});
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(cv::countNonZero(m.samples[0].fov_mask), 100);
}

TEST(Synthetic, EmptyOrMissingDirectory) {
  TempDir dir("synth");
  EXPECT_THROW(load_synthetic_images(dir.path()), EmptyManifestError);
  EXPECT_THROW(load_synthetic_images(dir / "missing"), DatasetLayoutError);
}

TEST(Preprocess, NearestNeighbourMaskHandMapping) {
  // 4x4 -> 2x2: destination pixel d samples source floor((d + 0.5) * 2) = 2d + 1.
  RetinalSample s = make_sample(4, 4, 9);
  cv::Mat m = cv::Mat::zeros(4, 4, CV_8UC1);
  m.at<std::uint8_t>(1, 1) = 1;
  m.at<std::uint8_t>(3, 1) = 1;
  m.at<std::uint8_t>(0, 0) = 1;  // never sampled
  s.vessel_mask = m;
  const auto out = preprocess(s, 2);
  ASSERT_EQ(out.vessel_mask->size(), cv::Size(2, 2));
  EXPECT_EQ(out.vessel_mask->at<std::uint8_t>(0, 0), 1);
  EXPECT_EQ(out.vessel_mask->at<std::uint8_t>(1, 0), 1);
  EXPECT_EQ(out.vessel_mask->at<std::uint8_t>(0, 1), 0);
  EXPECT_EQ(out.vessel_mask->at<std::uint8_t>(1, 1), 0);
}

TEST(Preprocess, SquareOutputBinaryMasksAndIdempotence) {
  const RetinalSample s = make_sample(30, 50, 4);
  const auto a = preprocess(s, 16);
  EXPECT_EQ(a.image.size(), cv::Size(16, 16));
  EXPECT_NO_THROW(validate_sample(a));
  const auto b = preprocess(a, 16);
  EXPECT_TRUE(mats_equal(a.image, b.image));
  EXPECT_TRUE(mats_equal(*a.vessel_mask, *b.vessel_mask));
  const RetinalSample sq = make_sample(8, 8, 5);
  EXPECT_TRUE(mats_equal(preprocess(sq, 8).image, sq.image));
}

TEST(Preprocess, NonPowerOfTwoRejected) {
  const RetinalSample s = make_sample(8, 8, 1);
  for (int bad : {0, -4, 3, 500, 96}) EXPECT_THROW(preprocess(s, bad), ConfigError) << bad;
  EXPECT_TRUE(is_power_of_two(512));
  EXPECT_FALSE(is_power_of_two(500));
}

TEST(Manifest, PreparedRoundTrip) {
  TempDir dir("manifest");
  DatasetManifest m;
  m.add(preprocess(make_sample(12, 12, 1), 8));
  m.add(preprocess(make_sample(12, 12, 2, false), 8));
  m.target_size = 8;
  m.metadata["note"] = "x";
  const auto written = write_prepared(m, dir / "prep");
  const auto back = read_manifest(dir / "prep/manifest.json");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.target_size, 8);
  EXPECT_EQ(back.metadata.at("note"), "x");
  EXPECT_TRUE(back.samples[0].labeled());
  EXPECT_FALSE(back.samples[1].labeled());
  EXPECT_TRUE(mats_equal(*back.samples[0].vessel_mask, *m.samples[0].vessel_mask));
  EXPECT_LE(cv::norm(back.samples[0].image, m.samples[0].image, cv::NORM_INF), 1e-4);
  EXPECT_TRUE(fs::path(back.paths[0].image).is_absolute());

  // Rewriting yields byte-identical files.
  const std::string before = retseg::testing::read_file(dir / "prep/manifest.json");
  write_prepared(m, dir / "prep");
  EXPECT_EQ(retseg::testing::read_file(dir / "prep/manifest.json"), before);
}

TEST(Manifest, MalformedOrMissing) {
  TempDir dir("manifest");
  EXPECT_THROW(read_manifest(dir / "missing.json"), DatasetLayoutError);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(read_manifest(dir / "bad.json"), DatasetLayoutError);
}

TEST(Holdout, DeterministicDisjointPartition) {
  DatasetManifest m;
  for (int i = 0; i < 20; ++i) m.add(make_sample(4, 4, i));
  const auto [kept, held] = split_holdout(m, 0.1, 7);
  EXPECT_EQ(held.size(), 2u);
  EXPECT_EQ(kept.size(), 18u);
  std::set<std::string> ids;
  for (const auto& s : kept.samples) ids.insert(s.id);
  for (const auto& s : held.samples) EXPECT_TRUE(ids.insert(s.id).second);
  EXPECT_EQ(ids.size(), 20u);
  const auto again = split_holdout(m, 0.1, 7);
  EXPECT_EQ(again.second.samples[0].id, held.samples[0].id);

  DatasetManifest one;
  one.add(make_sample(4, 4, 0));
  EXPECT_THROW(split_holdout(one, 0.5, 1), InsufficientSamplesError);
}

TEST(Strings, SourceAndSplit) {
  EXPECT_EQ(source_from_string(to_string(Source::synthetic)), Source::synthetic);
  EXPECT_EQ(split_from_string(to_string(Split::test)), Split::test);
  EXPECT_THROW(split_from_string("val"), ConfigError);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "retseg/dataset.hpp"
#include "retseg/tensor.hpp"

namespace retseg::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Minimal GIF89a encoder: CV_8UC1 indices into a palette of up to 256 RGB
// entries. Emits only literal codes and clears the table before it fills, so
// the code size never grows.
std::vector<std::uint8_t> encode_gif(const cv::Mat& indices, const std::vector<cv::Vec3b>& palette);
void write_gif(const std::filesystem::path& path, const cv::Mat& indices, const std::vector<cv::Vec3b>& palette);
// {0,1} mask as a black/white GIF.
void write_mask_gif(const std::filesystem::path& path, const cv::Mat& mask01);

// DRIVE-layout directory built from toy retinas: <root>/training and
// <root>/test with images/*.tif, 1st_manual/*_manual1.gif and mask/*.gif.
void write_drive_fixture(const std::filesystem::path& root, int n_train, int n_test, std::uint64_t seed,
                         int width = 565, int height = 584);

// Uniform values in [lo, hi).
Tensor random_tensor(Tensor::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

// Toy retinas with their trees attached as labels.
dataset::DatasetManifest toy_labeled(int count, std::uint64_t seed, int size);

std::string read_file(const std::filesystem::path& path);

}  // namespace retseg::testing

#include "support/fixtures.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "retseg/pipeline.hpp"
#include "retseg/rng.hpp"

namespace fs = std::filesystem;

namespace retseg::testing {

TempDir::TempDir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto stamp = std::random_device{}();
  path_ = fs::temp_directory_path() / ("retseg_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

namespace {

class BitWriter {
 public:
  void put(unsigned code, int bits) {
    acc_ |= static_cast<std::uint32_t>(code) << n_;
    n_ += bits;
    while (n_ >= 8) {
      bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
      acc_ >>= 8;
      n_ -= 8;
    }
  }
  std::vector<std::uint8_t> finish() {
    if (n_ > 0) bytes_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
    return bytes_;
  }

 private:
  std::uint32_t acc_ = 0;
  int n_ = 0;
  std::vector<std::uint8_t> bytes_;
};

void put16(std::vector<std::uint8_t>& out, int v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

}  // namespace

std::vector<std::uint8_t> encode_gif(const cv::Mat& indices, const std::vector<cv::Vec3b>& palette) {
  CV_Assert(indices.type() == CV_8UC1 && !palette.empty() && palette.size() <= 256);
  int bits = 1;
  while ((1u << bits) < palette.size()) ++bits;
  const int min_code = std::max(2, bits);
  std::vector<std::uint8_t> out{'G', 'I', 'F', '8', '9', 'a'};
  put16(out, indices.cols);
  put16(out, indices.rows);
  out.push_back(static_cast<std::uint8_t>(0x80 | ((bits - 1) << 4) | (bits - 1)));
  out.push_back(0);
  out.push_back(0);
  for (int i = 0; i < (1 << bits); ++i) {
    const cv::Vec3b c = i < static_cast<int>(palette.size()) ? palette[i] : cv::Vec3b{};
    out.insert(out.end(), {c[0], c[1], c[2]});
  }
  out.push_back(0x2c);
  put16(out, 0);
  put16(out, 0);
  put16(out, indices.cols);
  put16(out, indices.rows);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(min_code));

  const unsigned clear = 1u << min_code;
  const int width = min_code + 1;
  // Each literal after the first adds a table entry; clearing before the
  // table reaches 2^width keeps the code width fixed.
  const int per_clear = (1 << min_code) - 2;
  BitWriter w;
  w.put(clear, width);
  int since_clear = 0;
  for (int y = 0; y < indices.rows; ++y) {
    for (int x = 0; x < indices.cols; ++x) {
      if (since_clear == per_clear) {
        w.put(clear, width);
        since_clear = 0;
      }
      w.put(indices.at<std::uint8_t>(y, x), width);
      ++since_clear;
    }
  }
  w.put(clear + 1, width);
  const auto data = w.finish();
  for (std::size_t i = 0; i < data.size(); i += 255) {
    const std::size_t n = std::min<std::size_t>(255, data.size() - i);
    out.push_back(static_cast<std::uint8_t>(n));
    out.insert(out.end(), data.begin() + i, data.begin() + i + n);
  }
  out.push_back(0);
  out.push_back(0x3b);
  return out;
}

void write_gif(const fs::path& path, const cv::Mat& indices, const std::vector<cv::Vec3b>& palette) {
  const auto bytes = encode_gif(indices, palette);
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_mask_gif(const fs::path& path, const cv::Mat& mask01) {
  write_gif(path, mask01, {cv::Vec3b(0, 0, 0), cv::Vec3b(255, 255, 255)});
}

void write_drive_fixture(const fs::path& root, int n_train, int n_test, std::uint64_t seed, int width, int height) {
  auto write_split = [&](const std::string& dir, const std::string& suffix, int first, int count) {
    for (int i = 0; i < count; ++i) {
      const auto toy = pipeline::render_toy_retina(width, height, derive_seed(seed, dir, i));
      char num[16];
      std::snprintf(num, sizeof num, "%02d", first + i);
      cv::Mat rgb8, bgr8;
      toy.image.convertTo(rgb8, CV_8UC3, 255.0);
      cv::cvtColor(rgb8, bgr8, cv::COLOR_RGB2BGR);
      fs::create_directories(root / dir / "images");
      cv::imwrite((root / dir / "images" / (std::string(num) + "_" + suffix + ".tif")).string(), bgr8);
      write_mask_gif(root / dir / "1st_manual" / (std::string(num) + "_manual1.gif"), toy.vessels);
      write_mask_gif(root / dir / "mask" / (std::string(num) + "_" + suffix + "_mask.gif"), toy.fov);
    }
  };
  write_split("training", "training", 21, n_train);
  write_split("test", "test", 1, n_test);
}

Tensor random_tensor(Tensor::Shape shape, std::uint64_t seed, double lo, double hi) {
  Tensor t(shape);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

dataset::DatasetManifest toy_labeled(int count, std::uint64_t seed, int size) {
  auto toy = pipeline::toy_generate(count, seed, size);
  for (std::size_t i = 0; i < toy.manifest.size(); ++i) {
    toy.manifest.samples[i].vessel_mask = toy.reference_masks[i];
    toy.manifest.samples[i].source = dataset::Source::real;
  }
  return std::move(toy.manifest);
}

}  // namespace retseg::testing

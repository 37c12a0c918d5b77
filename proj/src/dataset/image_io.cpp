#include "retseg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "retseg/errors.hpp"

namespace retseg::io {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
}

// Any supported file as an unconverted cv::Mat; color images come back RGB.
cv::Mat read_any(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("no such image file: " + path.string());
  if (lower_extension(path) == ".gif") return decode_gif(read_bytes(path));
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("unreadable image: " + path.string());
  if (raw.channels() == 3) {
    cv::cvtColor(raw, raw, cv::COLOR_BGR2RGB);
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, raw, cv::COLOR_BGRA2RGB);
  }
  return raw;
}

double type_range(int depth) {
  switch (depth) {
    case CV_8U: return 255.0;
    case CV_16U: return 65535.0;
    case CV_32F:
    case CV_64F: return 1.0;
    default: throw IoError("unsupported image bit depth");
  }
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw IoError("failed to write " + path.string());
}

}  // namespace

cv::Mat read_rgb(const std::filesystem::path& path) {
  cv::Mat raw = read_any(path);
  const double range = type_range(raw.depth());
  if (raw.channels() == 1) cv::cvtColor(raw, raw, cv::COLOR_GRAY2RGB);
  cv::Mat out;
  raw.convertTo(out, CV_32FC3, 1.0 / range);
  return out;
}

cv::Mat read_binary_mask(const std::filesystem::path& path) {
  cv::Mat raw = read_any(path);
  const double range = type_range(raw.depth());
  if (raw.channels() == 3) cv::cvtColor(raw, raw, cv::COLOR_RGB2GRAY);
  cv::Mat as_float;
  raw.convertTo(as_float, CV_32F, 1.0 / range);
  cv::Mat binary = as_float > 0.5;  // 0/255
  return binary / 255;
}

void write_rgb_png16(const std::filesystem::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  cv::Mat out;
  bgr.convertTo(out, CV_16UC3, 65535.0);
  write_or_throw(path, out);
}

void write_mask_png(const std::filesystem::path& path, const cv::Mat& mask) {
  cv::Mat out;
  mask.convertTo(out, CV_8U, 255.0);
  write_or_throw(path, out);
}

void write_probability_png16(const std::filesystem::path& path, const cv::Mat& prob) {
  cv::Mat out;
  prob.convertTo(out, CV_16U, 65535.0);
  write_or_throw(path, out);
}

}  // namespace retseg::io

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include <opencv2/core.hpp>

namespace retseg::io {

// Decodes the first frame of a GIF87a/GIF89a stream into an 8-bit RGB image
// (CV_8UC3, RGB order). Throws IoError on malformed input.
cv::Mat decode_gif(std::span<const std::uint8_t> bytes);

// Reads an image as CV_32FC3, RGB order, values in [0,1]. GIF is handled by
// decode_gif, everything else by OpenCV. Throws IoError when unreadable.
cv::Mat read_rgb(const std::filesystem::path& path);

// Reads a single-channel mask and binarizes it: values above half of the
// type's range map to 1. Returns CV_8UC1 with values {0,1}.
cv::Mat read_binary_mask(const std::filesystem::path& path);

// 16-bit RGB PNG from a CV_32FC3 RGB image in [0,1].
void write_rgb_png16(const std::filesystem::path& path, const cv::Mat& rgb);
// 8-bit PNG, {0,1} mask written as {0,255}.
void write_mask_png(const std::filesystem::path& path, const cv::Mat& mask);
// 16-bit PNG of a probability map (CV_32F or CV_64F in [0,1]).
void write_probability_png16(const std::filesystem::path& path, const cv::Mat& prob);

}  // namespace retseg::io

#include "retseg/batching.hpp"

#include <algorithm>

#include "retseg/errors.hpp"

namespace retseg {
namespace {

void check_uniform(std::span<const dataset::RetinalSample> samples) {
  if (samples.empty()) throw ShapeError("cannot batch zero samples");
  for (const auto& s : samples) {
    if (s.image.size() != samples.front().image.size()) {
      throw ShapeError("sample '" + s.id + "' differs in size from the rest of the batch");
    }
  }
}

}  // namespace

Tensor image_tensor(std::span<const dataset::RetinalSample> samples) {
  check_uniform(samples);
  const int h = samples.front().height(), w = samples.front().width();
  Tensor out(static_cast<int>(samples.size()), 3, h, w);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const cv::Mat& img = samples[n].image;
    for (int y = 0; y < h; ++y) {
      const auto* row = img.ptr<cv::Vec3f>(y);
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) out.at(static_cast<int>(n), c, y, x) = row[x][c];
      }
    }
  }
  return out;
}

Tensor mask_tensor(std::span<const dataset::RetinalSample> samples) {
  check_uniform(samples);
  const int h = samples.front().height(), w = samples.front().width();
  Tensor out(static_cast<int>(samples.size()), 1, h, w);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (!samples[n].labeled()) throw DataError("sample '" + samples[n].id + "' has no vessel mask");
    const cv::Mat& m = *samples[n].vessel_mask;
    double* dst = out.plane(static_cast<int>(n), 0);
    for (int y = 0; y < h; ++y) {
      const auto* row = m.ptr<std::uint8_t>(y);
      for (int x = 0; x < w; ++x) dst[y * w + x] = row[x] ? 1.0 : 0.0;
    }
  }
  return out;
}

std::vector<cv::Mat> probability_maps(const Tensor& probs) {
  if (probs.c() != 1) throw ShapeError("probability tensor must have one channel, got " + probs.shape_string());
  std::vector<cv::Mat> maps;
  maps.reserve(probs.n());
  for (int n = 0; n < probs.n(); ++n) {
    cv::Mat m(probs.h(), probs.w(), CV_64FC1);
    std::copy_n(probs.plane(n, 0), static_cast<std::size_t>(probs.h()) * probs.w(), m.ptr<double>());
    maps.push_back(m);
  }
  return maps;
}

Tensor stack_maps(std::span<const cv::Mat> maps) {
  if (maps.empty()) throw ShapeError("cannot stack zero maps");
  Tensor out(static_cast<int>(maps.size()), 1, maps.front().rows, maps.front().cols);
  for (std::size_t n = 0; n < maps.size(); ++n) {
    if (maps[n].size() != maps.front().size() || maps[n].type() != CV_64FC1) {
      throw ShapeError("probability maps differ in size or type");
    }
    cv::Mat contiguous = maps[n].isContinuous() ? maps[n] : maps[n].clone();
    std::copy_n(contiguous.ptr<double>(), contiguous.total(), out.plane(static_cast<int>(n), 0));
  }
  return out;
}

}  // namespace retseg

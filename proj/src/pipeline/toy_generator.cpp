#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "retseg/errors.hpp"
#include "retseg/parallel.hpp"
#include "retseg/pipeline.hpp"

namespace retseg::pipeline {
namespace {

struct Branch {
  double x, y, angle, width, length;
  int depth;
};

void draw_tree(cv::Mat& canvas, Rng& rng, double x, double y, double angle, double side) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> wiggle(0.0, 0.12);
  const double step = side * 0.012;
  std::vector<Branch> stack{{x, y, angle, side * (0.012 + 0.008 * unit(rng)), side * (0.55 + 0.3 * unit(rng)), 0}};
  while (!stack.empty()) {
    Branch b = stack.back();
    stack.pop_back();
    for (double travelled = 0.0; travelled < b.length; travelled += step) {
      const double nx = b.x + std::cos(b.angle) * step;
      const double ny = b.y + std::sin(b.angle) * step;
      const int thickness = std::max(1, static_cast<int>(std::lround(b.width)));
      cv::line(canvas, cv::Point2d(b.x, b.y), cv::Point2d(nx, ny), cv::Scalar(1.0), thickness, cv::LINE_8);
      b.x = nx;
      b.y = ny;
      b.angle += wiggle(rng);
      if (b.depth < 4 && unit(rng) < 0.05) {
        const double turn = (0.4 + 0.5 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
        stack.push_back({b.x, b.y, b.angle + turn, b.width * 0.7, (b.length - travelled) * 0.7, b.depth + 1});
        b.width *= 0.85;
      }
    }
  }
}

}  // namespace

ToyRetina render_toy_retina(int width, int height, std::uint64_t seed) {
  if (width < 8 || height < 8) throw ConfigError("toy retina needs at least 8x8 pixels");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = std::min(width, height);
  const double cx = width / 2.0 + (unit(rng) - 0.5) * 0.04 * side;
  const double cy = height / 2.0 + (unit(rng) - 0.5) * 0.04 * side;
  const double radius = side * (0.44 + 0.03 * unit(rng));

  ToyRetina out;
  out.fov = cv::Mat::zeros(height, width, CV_8UC1);
  cv::circle(out.fov, cv::Point2d(cx, cy), static_cast<int>(radius), cv::Scalar(1), cv::FILLED);

  // Optic disc on the left or right of the centre.
  const double disc_side = unit(rng) < 0.5 ? -1.0 : 1.0;
  const double disc_x = cx + disc_side * radius * (0.45 + 0.15 * unit(rng));
  const double disc_y = cy + (unit(rng) - 0.5) * 0.2 * radius;
  const double disc_r = side * (0.06 + 0.02 * unit(rng));

  const cv::Vec3d base(0.72 + 0.12 * unit(rng), 0.32 + 0.1 * unit(rng), 0.14 + 0.08 * unit(rng));
  cv::Mat field(height, width, CV_32FC3);
  for (int y = 0; y < height; ++y) {
    auto* row = field.ptr<cv::Vec3f>(y);
    for (int x = 0; x < width; ++x) {
      const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
      const double d2 = ((x - disc_x) * (x - disc_x) + (y - disc_y) * (y - disc_y)) / (disc_r * disc_r);
      const double vignette = 1.0 - 0.35 * r2;
      const double disc = 0.3 * std::exp(-d2);
      for (int c = 0; c < 3; ++c) row[x][c] = static_cast<float>(base[c] * vignette + disc);
    }
  }

  // Vessel trees leave the optic disc in both vertical directions.
  cv::Mat canvas = cv::Mat::zeros(height, width, CV_32FC1);
  const int trees = 2 + static_cast<int>(unit(rng) * 3);
  for (int t = 0; t < trees; ++t) {
    const double vertical = t % 2 == 0 ? -1.0 : 1.0;
    const double angle = std::atan2(vertical, -disc_side * (0.3 + 0.7 * unit(rng)));
    draw_tree(canvas, rng, disc_x, disc_y, angle, side);
  }
  cv::Mat vessels_u8;
  canvas.convertTo(vessels_u8, CV_8UC1);
  out.vessels = vessels_u8 & out.fov;

  cv::Mat soft;
  cv::GaussianBlur(canvas, soft, cv::Size(0, 0), std::max(0.5, side / 512.0));
  cv::max(soft, canvas * 0.8, soft);
  const cv::Vec3f contrast(0.3f, 0.6f, 0.45f);
  std::normal_distribution<double> noise(0.0, 0.015);
  out.image = cv::Mat::zeros(height, width, CV_32FC3);
  for (int y = 0; y < height; ++y) {
    const auto* f = field.ptr<cv::Vec3f>(y);
    const auto* v = soft.ptr<float>(y);
    const auto* m = out.fov.ptr<std::uint8_t>(y);
    auto* dst = out.image.ptr<cv::Vec3f>(y);
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double value = f[x][c] * (1.0 - contrast[c] * v[x]) + noise(rng);
        dst[x][c] = m[x] ? static_cast<float>(std::clamp(value, 0.0, 1.0)) : 0.0f;
      }
    }
  }
  return out;
}

ToyDataset toy_generate(int count, std::uint64_t seed, int size) {
  if (count < 1) throw ConfigError("toy_generate: count must be >= 1");
  std::vector<ToyRetina> retinas(count);
  parallel_for(static_cast<std::size_t>(count), data_workers(), [&](std::size_t i) {
    retinas[i] = render_toy_retina(size, size, derive_seed(seed, "toy-retina", i));
  });
  ToyDataset out;
  out.manifest.split = dataset::Split::train;
  out.manifest.target_size = size;
  out.manifest.metadata["generator"] = "toy_procedural";
  out.manifest.metadata["seed"] = std::to_string(seed);
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "toy_%05d", i);
    dataset::RetinalSample s;
    s.id = id;
    s.source = dataset::Source::synthetic;
    s.image = retinas[i].image;
    s.fov_mask = retinas[i].fov;
    out.manifest.add(std::move(s));
    out.reference_masks.push_back(retinas[i].vessels);
  }
  return out;
}

}  // namespace retseg::pipeline

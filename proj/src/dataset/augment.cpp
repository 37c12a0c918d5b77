#include <opencv2/imgproc.hpp>

#include "retseg/dataset.hpp"
#include "retseg/errors.hpp"
#include "retseg/rng.hpp"

using nlohmann::json;

namespace retseg::dataset {
namespace {

double draw(Rng& rng, const Range& r) {
  if (r.lo == r.hi) {
    rng.discard(1);  // keep the stream aligned across specs
    return r.lo;
  }
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j, const Range& fallback) {
  if (j.is_null()) return fallback;
  if (!j.is_array() || j.size() != 2) throw ConfigError("augmentation range must be [lo, hi]");
  Range r{j[0].get<double>(), j[1].get<double>()};
  if (r.lo > r.hi) throw ConfigError("augmentation range has lo > hi");
  return r;
}

}  // namespace

AugmentationSpec AugmentationSpec::disabled() {
  AugmentationSpec s;
  s.enabled = false;
  return s;
}

AugmentationSpec AugmentationSpec::identity_transform() {
  AugmentationSpec s;
  s.horizontal_flip = s.vertical_flip = false;
  s.rotation_degrees = s.brightness = s.contrast = s.translate = {0.0, 0.0};
  s.scale = {1.0, 1.0};
  return s;
}

RetinalSample augment(const RetinalSample& sample, const AugmentationSpec& spec, std::uint64_t rng_seed) {
  RetinalSample out;
  out.id = sample.id;
  out.source = sample.source;
  out.image = sample.image.clone();
  out.fov_mask = sample.fov_mask.clone();
  if (sample.vessel_mask) out.vessel_mask = sample.vessel_mask->clone();
  if (!spec.enabled) return out;

  // Every parameter is drawn in a fixed order whether or not it is used.
  Rng rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool hflip = unit(rng) < spec.flip_probability && spec.horizontal_flip;
  const bool vflip = unit(rng) < spec.flip_probability && spec.vertical_flip;
  const double angle = draw(rng, spec.rotation_degrees);
  const double scale = draw(rng, spec.scale);
  const double tx = draw(rng, spec.translate);
  const double ty = draw(rng, spec.translate);
  const double brightness = draw(rng, spec.brightness);
  const double contrast = draw(rng, spec.contrast);

  auto for_each_plane = [&](auto&& fn) {
    fn(out.image, cv::INTER_LINEAR);
    fn(out.fov_mask, cv::INTER_NEAREST);
    if (out.vessel_mask) fn(*out.vessel_mask, cv::INTER_NEAREST);
  };

  if (hflip || vflip) {
    const int code = hflip && vflip ? -1 : (hflip ? 1 : 0);
    for_each_plane([&](cv::Mat& m, int) { cv::flip(m, m, code); });
  }

  if (angle != 0.0 || scale != 1.0 || tx != 0.0 || ty != 0.0) {
    const cv::Point2f center(static_cast<float>(sample.width() - 1) / 2.0f,
                             static_cast<float>(sample.height() - 1) / 2.0f);
    cv::Mat warp = cv::getRotationMatrix2D(center, angle, scale);
    warp.at<double>(0, 2) += tx * sample.width();
    warp.at<double>(1, 2) += ty * sample.height();
    for_each_plane([&](cv::Mat& m, int interpolation) {
      cv::Mat dst;
      cv::warpAffine(m, dst, warp, m.size(), interpolation, cv::BORDER_CONSTANT, cv::Scalar::all(0));
      m = dst;
    });
  }

  if (brightness != 0.0 || contrast != 0.0) {
    out.image *= (1.0 + brightness);
    const cv::Scalar mean = cv::mean(out.image);
    const double gray = (mean[0] + mean[1] + mean[2]) / 3.0;
    out.image = (out.image - cv::Scalar::all(gray)) * (1.0 + contrast) + cv::Scalar::all(gray);
    cv::min(out.image, 1.0, out.image);
    cv::max(out.image, 0.0, out.image);
  }
  return out;
}

json to_json(const AugmentationSpec& s) {
  return {{"enabled", s.enabled},
          {"horizontal_flip", s.horizontal_flip},
          {"vertical_flip", s.vertical_flip},
          {"flip_probability", s.flip_probability},
          {"rotation_degrees", range_json(s.rotation_degrees)},
          {"brightness", range_json(s.brightness)},
          {"contrast", range_json(s.contrast)},
          {"scale", range_json(s.scale)},
          {"translate", range_json(s.translate)}};
}

AugmentationSpec augmentation_from_json(const json& j) {
  AugmentationSpec s;
  s.enabled = j.value("enabled", s.enabled);
  s.horizontal_flip = j.value("horizontal_flip", s.horizontal_flip);
  s.vertical_flip = j.value("vertical_flip", s.vertical_flip);
  s.flip_probability = j.value("flip_probability", s.flip_probability);
  auto field = [&](const char* key) { return j.contains(key) ? j.at(key) : json(nullptr); };
  s.rotation_degrees = range_from(field("rotation_degrees"), s.rotation_degrees);
  s.brightness = range_from(field("brightness"), s.brightness);
  s.contrast = range_from(field("contrast"), s.contrast);
  s.scale = range_from(field("scale"), s.scale);
  s.translate = range_from(field("translate"), s.translate);
  if (s.flip_probability < 0.0 || s.flip_probability > 1.0) throw ConfigError("flip_probability must be in [0,1]");
  if (s.scale.lo <= 0.0) throw ConfigError("augmentation scale must be positive");
  return s;
}

}  // namespace retseg::dataset

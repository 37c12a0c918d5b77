#include "retseg/errors.hpp"
#include "retseg/image_io.hpp"
#include "retseg/pipeline.hpp"

namespace fs = std::filesystem;

namespace retseg::pipeline {

PseudoLabelResult pseudo_label(const Predictor& predictor, const dataset::DatasetManifest& synthetic,
                               double threshold, int batch_size) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("pseudo-label threshold must be in (0,1)");
  for (const auto& s : synthetic.samples) {
    if (s.labeled()) {
      throw PreconditionError("pseudo_label: sample '" + s.id + "' already has a vessel mask; refusing to overwrite");
    }
  }
  PseudoLabelResult result;
  result.soft_maps = predict_all(predictor, synthetic, batch_size);
  result.labeled = synthetic;
  result.labeled.metadata["pseudo_label_threshold"] = std::to_string(threshold);
  for (std::size_t i = 0; i < synthetic.size(); ++i) {
    cv::Mat mask = result.soft_maps[i] >= threshold;
    mask /= 255;
    result.labeled.samples[i].vessel_mask = mask;
  }
  return result;
}

void write_pseudo_labels(const PseudoLabelResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path base = fs::absolute(dir).lexically_normal();
  dataset::DatasetManifest listed = result.labeled;
  listed.paths.resize(listed.size());
  // Source files are referenced relative to the output directory; samples
  // that only exist in memory get their image and FOV written here.
  auto relative_to_dir = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path.lexically_relative(base).string() : p;
  };
  for (std::size_t i = 0; i < listed.size(); ++i) {
    const auto& s = listed.samples[i];
    auto& paths = listed.paths[i];
    if (paths.image.empty()) {
      paths.image = s.id + "_image.png";
      io::write_rgb_png16(dir / paths.image, s.image);
    } else {
      paths.image = relative_to_dir(paths.image);
    }
    if (paths.fov_mask.empty()) {
      paths.fov_mask = s.id + "_fov.png";
      io::write_mask_png(dir / paths.fov_mask, s.fov_mask);
    } else {
      paths.fov_mask = relative_to_dir(paths.fov_mask);
    }
    paths.vessel_mask = s.id + "_mask.png";
    io::write_mask_png(dir / paths.vessel_mask, *s.vessel_mask);
    io::write_probability_png16(dir / (s.id + "_prob.png"), result.soft_maps[i]);
  }
  dataset::write_manifest(listed, dir / "manifest.json");
}

}  // namespace retseg::pipeline

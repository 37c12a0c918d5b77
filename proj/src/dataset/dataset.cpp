#include "retseg/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "retseg/errors.hpp"
#include "retseg/image_io.hpp"
#include "retseg/parallel.hpp"
#include "retseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retseg::dataset {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<fs::path> list_files(const fs::path& dir, std::initializer_list<const char*> extensions) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = lower(entry.path().extension().string());
    for (const char* allowed : extensions) {
      if (ext == allowed) {
        out.push_back(entry.path());
        break;
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return out;
}

// "21_training.tif" -> "21"; names without a leading number use the stem.
std::string numeric_prefix(const fs::path& file) {
  const std::string name = file.filename().string();
  std::size_t n = 0;
  while (n < name.size() && std::isdigit(static_cast<unsigned char>(name[n]))) ++n;
  return n > 0 ? name.substr(0, n) : file.stem().string();
}

const fs::path* find_by_prefix(const std::vector<fs::path>& files, const std::string& prefix) {
  for (const auto& f : files) {
    if (numeric_prefix(f) == prefix) return &f;
  }
  return nullptr;
}

bool is_binary(const cv::Mat& m) {
  cv::Mat bad = (m != 0) & (m != 1);
  return cv::countNonZero(bad) == 0;
}

cv::Mat rebinarize(const cv::Mat& mask) {
  cv::Mat b = mask > 0;
  return b / 255;
}

// Pixel-centre nearest neighbour: destination d samples floor((d + 0.5) * in / out).
// OpenCV 4.5's INTER_NEAREST_EXACT takes the top-left pixel on exact 2x
// reductions, so the mapping is spelled out here.
cv::Mat resize_nearest(const cv::Mat& src, cv::Size size) {
  auto lut = [](int out, int in) {
    std::vector<int> idx(static_cast<std::size_t>(out));
    for (int d = 0; d < out; ++d) {
      const auto s = static_cast<int>(std::floor((d + 0.5) * in / out));
      idx[static_cast<std::size_t>(d)] = std::min(s, in - 1);
    }
    return idx;
  };
  const auto xs = lut(size.width, src.cols);
  const auto ys = lut(size.height, src.rows);
  cv::Mat dst(size, src.type());
  for (int y = 0; y < size.height; ++y) {
    const auto* row = src.ptr<std::uint8_t>(ys[static_cast<std::size_t>(y)]);
    auto* out = dst.ptr<std::uint8_t>(y);
    for (int x = 0; x < size.width; ++x) out[x] = row[xs[static_cast<std::size_t>(x)]];
  }
  return dst;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::string to_string(Source s) { return s == Source::real ? "real" : "synthetic"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Source source_from_string(const std::string& s) {
  if (s == "real") return Source::real;
  if (s == "synthetic") return Source::synthetic;
  throw ConfigError("unknown sample source '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train" || s == "training") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

void DatasetManifest::add(RetinalSample sample, SamplePaths sample_paths) {
  samples.push_back(std::move(sample));
  paths.push_back(std::move(sample_paths));
}

void validate_sample(const RetinalSample& s) {
  if (s.image.empty()) throw IntegrityError("sample '" + s.id + "': empty image");
  if (s.image.type() != CV_32FC3) throw IntegrityError("sample '" + s.id + "': image must be 3-channel float");
  const cv::Size size = s.image.size();
  auto check_mask = [&](const cv::Mat& m, const char* what) {
    if (m.size() != size) {
      throw IntegrityError("sample '" + s.id + "': " + what + " is " + std::to_string(m.cols) + "x" +
                           std::to_string(m.rows) + " but image is " + std::to_string(size.width) + "x" +
                           std::to_string(size.height));
    }
    if (m.type() != CV_8UC1 || !is_binary(m)) {
      throw IntegrityError("sample '" + s.id + "': " + what + " is not a binary 8-bit mask");
    }
  };
  check_mask(s.fov_mask, "fov mask");
  if (s.vessel_mask) check_mask(*s.vessel_mask, "vessel mask");
}

DatasetManifest load_drive_dataset(const fs::path& root, Split split) {
  if (!fs::is_directory(root)) throw DatasetLayoutError("dataset root does not exist: " + root.string());
  fs::path split_dir = root / to_string(split);
  if (split == Split::train && !fs::is_directory(split_dir) && fs::is_directory(root / "training")) {
    split_dir = root / "training";
  }
  if (!fs::is_directory(split_dir)) {
    throw DatasetLayoutError("missing split directory '" + to_string(split) + "' under " + root.string());
  }
  for (const char* sub : {"images", "1st_manual", "mask"}) {
    if (!fs::is_directory(split_dir / sub)) {
      throw DatasetLayoutError("missing '" + std::string(sub) + "' directory in " + split_dir.string());
    }
  }
  const auto images = list_files(split_dir / "images", {".tif", ".tiff", ".png"});
  const auto manuals = list_files(split_dir / "1st_manual", {".gif", ".png"});
  const auto masks = list_files(split_dir / "mask", {".gif", ".png"});
  if (images.empty()) throw DatasetLayoutError("no images found in " + (split_dir / "images").string());

  std::vector<SamplePaths> sample_paths;
  std::vector<std::string> ids;
  for (const auto& image : images) {
    const std::string id = numeric_prefix(image);
    const fs::path* manual = find_by_prefix(manuals, id);
    const fs::path* mask = find_by_prefix(masks, id);
    if (!manual) throw DatasetLayoutError("sample '" + id + "': no vessel segmentation in 1st_manual");
    if (!mask) throw DatasetLayoutError("sample '" + id + "': no FOV mask in mask");
    ids.push_back(id);
    sample_paths.push_back({image.string(), manual->string(), mask->string()});
  }

  std::vector<RetinalSample> samples(ids.size());
  parallel_for(ids.size(), data_workers(), [&](std::size_t i) {
    RetinalSample s;
    s.id = ids[i];
    s.source = Source::real;
    s.image = io::read_rgb(sample_paths[i].image);
    s.vessel_mask = io::read_binary_mask(sample_paths[i].vessel_mask);
    s.fov_mask = io::read_binary_mask(sample_paths[i].fov_mask);
    validate_sample(s);
    samples[i] = std::move(s);
  });

  DatasetManifest manifest;
  manifest.split = split;
  manifest.metadata["format"] = "drive";
  manifest.metadata["root"] = root.string();
  for (std::size_t i = 0; i < samples.size(); ++i) manifest.add(std::move(samples[i]), sample_paths[i]);
  return manifest;
}

DatasetManifest load_synthetic_images(const fs::path& dir, const SyntheticSourceInfo& info) {
  if (!fs::is_directory(dir)) throw DatasetLayoutError("synthetic image directory does not exist: " + dir.string());
  const auto files = list_files(dir, {".png", ".jpg", ".jpeg"});

  struct Loaded {
    std::optional<RetinalSample> sample;
    SamplePaths paths;
    std::string warning;
  };
  std::vector<Loaded> loaded(files.size());
  parallel_for(files.size(), data_workers(), [&](std::size_t i) {
    const fs::path& file = files[i];
    Loaded& out = loaded[i];
    try {
      RetinalSample s;
      s.id = file.stem().string();
      s.source = Source::synthetic;
      s.image = io::read_rgb(file);
      out.paths.image = file.string();
      const fs::path label = dir / "labels" / file.filename().replace_extension(".png");
      if (fs::is_regular_file(label)) {
        s.vessel_mask = io::read_binary_mask(label);
        out.paths.vessel_mask = label.string();
      }
      const fs::path fov = dir / "mask" / file.filename().replace_extension(".png");
      if (fs::is_regular_file(fov)) {
        s.fov_mask = io::read_binary_mask(fov);
        out.paths.fov_mask = fov.string();
      } else {
        s.fov_mask = cv::Mat::ones(s.image.size(), CV_8UC1);
      }
      validate_sample(s);
      out.sample = std::move(s);
    } catch (const Error& e) {
      out.warning = file.filename().string() + ": " + e.what();
    }
  });

  DatasetManifest manifest;
  manifest.split = Split::train;
  manifest.metadata["format"] = "synthetic";
  manifest.metadata["generator"] = info.generator;
  if (info.truncation) manifest.metadata["truncation"] = json(*info.truncation).dump();
  for (auto& l : loaded) {
    if (l.sample) {
      manifest.add(std::move(*l.sample), std::move(l.paths));
    } else {
      manifest.warnings.push_back(std::move(l.warning));
    }
  }
  if (manifest.empty()) throw EmptyManifestError("no readable images in " + dir.string());
  return manifest;
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

RetinalSample preprocess(const RetinalSample& sample, int target_size) {
  if (!is_power_of_two(target_size)) {
    throw ConfigError("target size " + std::to_string(target_size) + " is not a power of two");
  }
  if (sample.image.empty()) throw DataError("sample '" + sample.id + "': empty image");
  const cv::Size size(target_size, target_size);
  RetinalSample out;
  out.id = sample.id;
  out.source = sample.source;
  if (sample.image.size() == size) {
    out.image = sample.image.clone();
  } else {
    cv::resize(sample.image, out.image, size, 0, 0, cv::INTER_LINEAR);
  }
  auto resize_mask = [&](const cv::Mat& m) {
    cv::Mat r;
    if (m.size() == size) {
      r = m.clone();
    } else {
      r = resize_nearest(m, size);
    }
    return rebinarize(r);
  };
  out.fov_mask = resize_mask(sample.fov_mask);
  if (sample.vessel_mask) out.vessel_mask = resize_mask(*sample.vessel_mask);
  return out;
}

DatasetManifest preprocess(const DatasetManifest& manifest, int target_size) {
  if (!is_power_of_two(target_size)) {
    throw ConfigError("target size " + std::to_string(target_size) + " is not a power of two");
  }
  DatasetManifest out = manifest;
  parallel_for(out.samples.size(), data_workers(),
               [&](std::size_t i) { out.samples[i] = preprocess(manifest.samples[i], target_size); });
  out.target_size = target_size;
  return out;
}

json manifest_to_json(const DatasetManifest& m) {
  json samples = json::array();
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& s = m.samples[i];
    const SamplePaths p = i < m.paths.size() ? m.paths[i] : SamplePaths{};
    samples.push_back({{"id", s.id},
                       {"source", to_string(s.source)},
                       {"image", p.image},
                       {"vessel_mask", p.vessel_mask},
                       {"fov_mask", p.fov_mask}});
  }
  json j{{"split", to_string(m.split)},
         {"target_size", m.target_size ? json(*m.target_size) : json(nullptr)},
         {"metadata", m.metadata},
         {"warnings", m.warnings},
         {"samples", samples}};
  return j;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write manifest " + file.string());
  out << manifest_to_json(manifest).dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetLayoutError("cannot open manifest " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetLayoutError("malformed manifest " + file.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(file).parent_path();
  DatasetManifest m;
  m.split = split_from_string(j.at("split").get<std::string>());
  if (!j.at("target_size").is_null()) m.target_size = j.at("target_size").get<int>();
  m.metadata = j.value("metadata", std::map<std::string, std::string>{});
  m.warnings = j.value("warnings", std::vector<std::string>{});
  const auto& entries = j.at("samples");
  std::vector<RetinalSample> samples(entries.size());
  std::vector<SamplePaths> paths(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto absolute = [&](const char* key) {
      const std::string p = entries[i].value(key, "");
      return p.empty() ? p : resolve(base, p).lexically_normal().string();
    };
    paths[i] = {absolute("image"), absolute("vessel_mask"), absolute("fov_mask")};
  }
  parallel_for(entries.size(), data_workers(), [&](std::size_t i) {
    const auto& e = entries[i];
    RetinalSample s;
    s.id = e.at("id").get<std::string>();
    s.source = source_from_string(e.at("source").get<std::string>());
    if (paths[i].image.empty()) throw DatasetLayoutError("sample '" + s.id + "': manifest lists no image path");
    s.image = io::read_rgb(paths[i].image);
    if (!paths[i].vessel_mask.empty()) s.vessel_mask = io::read_binary_mask(paths[i].vessel_mask);
    s.fov_mask = paths[i].fov_mask.empty() ? cv::Mat::ones(s.image.size(), CV_8UC1)
                                           : io::read_binary_mask(paths[i].fov_mask);
    validate_sample(s);
    samples[i] = std::move(s);
  });
  for (std::size_t i = 0; i < samples.size(); ++i) m.add(std::move(samples[i]), paths[i]);
  return m;
}

DatasetManifest write_prepared(const DatasetManifest& manifest, const fs::path& out_dir) {
  DatasetManifest out = manifest;
  out.paths.assign(manifest.size(), {});
  parallel_for(manifest.size(), data_workers(), [&](std::size_t i) {
    const auto& s = manifest.samples[i];
    SamplePaths p;
    p.image = "images/" + s.id + ".png";
    io::write_rgb_png16(out_dir / p.image, s.image);
    p.fov_mask = "mask/" + s.id + ".png";
    io::write_mask_png(out_dir / p.fov_mask, s.fov_mask);
    if (s.vessel_mask) {
      p.vessel_mask = "1st_manual/" + s.id + ".png";
      io::write_mask_png(out_dir / p.vessel_mask, *s.vessel_mask);
    }
    out.paths[i] = p;
  });
  write_manifest(out, out_dir / "manifest.json");
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split_holdout(const DatasetManifest& manifest, double fraction,
                                                          std::uint64_t seed) {
  const std::size_t n = manifest.size();
  if (n < 2) throw InsufficientSamplesError("need at least 2 samples to hold out a validation set");
  std::size_t held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  held = std::clamp<std::size_t>(held, 1, n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "holdout");
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_held(n, false);
  for (std::size_t i = 0; i < held; ++i) is_held[order[i]] = true;

  DatasetManifest kept = manifest, out = manifest;
  kept.samples.clear();
  kept.paths.clear();
  out.samples.clear();
  out.paths.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const SamplePaths p = i < manifest.paths.size() ? manifest.paths[i] : SamplePaths{};
    (is_held[i] ? out : kept).add(manifest.samples[i], p);
  }
  return {std::move(kept), std::move(out)};
}

}  // namespace retseg::dataset

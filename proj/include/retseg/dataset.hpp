#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"

namespace retseg::dataset {

enum class Source { real, synthetic };
enum class Split { train, test };

std::string to_string(Source s);
std::string to_string(Split s);
Source source_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// One fundus image with its labels.
//   image       CV_32FC3, RGB, values in [0,1]
//   vessel_mask CV_8UC1 {0,1}; absent for unlabeled synthetic images
//   fov_mask    CV_8UC1 {0,1}; 1 inside the retinal field of view
struct RetinalSample {
  std::string id;
  cv::Mat image;
  std::optional<cv::Mat> vessel_mask;
  cv::Mat fov_mask;
  Source source = Source::real;

  int height() const { return image.rows; }
  int width() const { return image.cols; }
  bool labeled() const { return vessel_mask.has_value(); }
};

// Throws IntegrityError (naming the sample) when shapes disagree or masks
// are not binary.
void validate_sample(const RetinalSample& sample);

// Where a sample was read from; empty strings for in-memory data.
struct SamplePaths {
  std::string image;
  std::string vessel_mask;
  std::string fov_mask;
};

struct DatasetManifest {
  std::vector<RetinalSample> samples;
  std::vector<SamplePaths> paths;  // parallel to samples
  Split split = Split::train;
  std::optional<int> target_size;  // set once every sample is preprocessed
  std::map<std::string, std::string> metadata;
  std::vector<std::string> warnings;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  void add(RetinalSample sample, SamplePaths sample_paths = {});
};

// DRIVE layout: <root>/<split>/{images,1st_manual,mask}. "training" is
// accepted as the directory name of the train split. Files pair up by their
// leading numeric prefix; samples are ordered by image filename.
DatasetManifest load_drive_dataset(const std::filesystem::path& root, Split split);

// Provenance of externally generated images, recorded as manifest metadata.
struct SyntheticSourceInfo {
  std::string generator = "stylegan2";
  std::optional<double> truncation = 0.7;
};

// <dir>/*.png plus optional <dir>/labels/<name>.png (vessel mask) and
// <dir>/mask/<name>.png (FOV). Without a FOV file the mask is all ones.
// Unreadable files are skipped and listed in `warnings`.
DatasetManifest load_synthetic_images(const std::filesystem::path& dir,
                                      const SyntheticSourceInfo& info = {});

bool is_power_of_two(int v);

// Bilinear resize of the image, nearest-neighbour resize of the masks,
// square target_size x target_size output.
RetinalSample preprocess(const RetinalSample& sample, int target_size);
DatasetManifest preprocess(const DatasetManifest& manifest, int target_size);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentationSpec {
  bool enabled = true;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  double flip_probability = 0.5;
  Range rotation_degrees{-15.0, 15.0};
  Range brightness{-0.2, 0.2};  // multiplicative offset
  Range contrast{-0.2, 0.2};
  Range scale{0.9, 1.1};
  Range translate{-0.05, 0.05};  // fraction of the image side

  static AugmentationSpec disabled();
  static AugmentationSpec identity_transform();  // enabled, every range collapsed
};

// Same geometric warp on image, vessel mask and FOV; color jitter on the
// image only. Deterministic in rng_seed.
RetinalSample augment(const RetinalSample& sample, const AugmentationSpec& spec, std::uint64_t rng_seed);

nlohmann::json to_json(const AugmentationSpec& spec);
AugmentationSpec augmentation_from_json(const nlohmann::json& j);

// Manifest listing (ids, paths, source, split, target size, metadata).
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
// Loads every sample listed in a manifest file. Relative paths resolve
// against the manifest's directory; the returned paths are absolute.
DatasetManifest read_manifest(const std::filesystem::path& file);

// Writes images/, 1st_manual/, mask/ PNGs and manifest.json under out_dir and
// returns the manifest with paths filled in. Rewrites the same files on rerun.
DatasetManifest write_prepared(const DatasetManifest& manifest, const std::filesystem::path& out_dir);

// Deterministic hold-out: returns {kept, held_out} with round(fraction * n)
// samples (at least one, at most n-1) moved to held_out.
std::pair<DatasetManifest, DatasetManifest> split_holdout(const DatasetManifest& manifest, double fraction,
                                                          std::uint64_t seed);

}  // namespace retseg::dataset

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "retseg/dataset.hpp"
#include "retseg/metrics.hpp"
#include "retseg/saunet.hpp"
#include "retseg/training.hpp"

namespace retseg::pipeline {

// ------------------------------------------------------------ toy source

struct ToyRetina {
  cv::Mat image;    // CV_32FC3 RGB
  cv::Mat vessels;  // CV_8UC1 {0,1}, inside the field of view
  cv::Mat fov;      // CV_8UC1 {0,1}, the circular field
};

// Procedural fundus-like image: a reddish disk with vignetting and an optic
// disc on black, darkened along branching random-walk vessel trees.
ToyRetina render_toy_retina(int width, int height, std::uint64_t seed);

struct ToyDataset {
  dataset::DatasetManifest manifest;    // unlabeled, source = synthetic
  std::vector<cv::Mat> reference_masks;  // generated trees, for harness checks only
};

// `count` square images of side `size`; image i depends only on (seed, i).
ToyDataset toy_generate(int count, std::uint64_t seed, int size);

// ------------------------------------------------------------ prediction

// N x 3 x S x S -> N x 1 x S x S probabilities.
using Predictor = std::function<Tensor(const Tensor&)>;

Predictor make_predictor(std::shared_ptr<const model::SAUNet> net);

std::vector<cv::Mat> predict_all(const Predictor& predictor, const dataset::DatasetManifest& manifest,
                                 int batch_size = 2);

// Pooled (micro-averaged) metrics of a model or ensemble on labeled data.
metrics::MetricsReport evaluate_model(const Predictor& predictor, const dataset::DatasetManifest& test,
                                      const metrics::EvaluationOptions& options = {}, int batch_size = 2);

// ---------------------------------------------------------- pseudo-label

struct PseudoLabelResult {
  dataset::DatasetManifest labeled;  // vessel_mask = prob >= threshold
  std::vector<cv::Mat> soft_maps;    // CV_64FC1 probabilities
};

// Throws PreconditionError if any input sample already carries a label.
PseudoLabelResult pseudo_label(const Predictor& predictor, const dataset::DatasetManifest& synthetic,
                               double threshold = 0.5, int batch_size = 2);

// <dir>/<id>_mask.png (8-bit) and <dir>/<id>_prob.png (16-bit), plus
// manifest.json pointing at the source images and the new masks. Samples
// without an image path on disk get <id>_image.png and <id>_fov.png.
void write_pseudo_labels(const PseudoLabelResult& result, const std::filesystem::path& dir);

// --------------------------------------------------------------- ensemble

enum class FusionMode { mean, max, min, vote };
std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);

struct EnsembleSpec {
  std::vector<std::string> members;  // checkpoint paths
  FusionMode mode = FusionMode::mean;
  double threshold = 0.5;
};

nlohmann::json to_json(const EnsembleSpec& s);
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j);

struct EnsembleOutput {
  Tensor probabilities;  // combined, N x 1 x S x S
  Tensor binary;         // combined >= threshold, as {0,1}
};

// Per-pixel fusion of member probability maps. `vote` fuses the members'
// binarized maps into the fraction of positive votes.
class Ensemble {
 public:
  Ensemble(std::vector<Predictor> members, FusionMode mode, double threshold);
  static Ensemble from_spec(const EnsembleSpec& spec);

  EnsembleOutput predict(const Tensor& batch) const;
  Predictor as_predictor() const;

 private:
  std::vector<Predictor> members_;
  FusionMode mode_;
  double threshold_;
};

EnsembleOutput ensemble_predict(const EnsembleSpec& spec, const Tensor& batch);

// --------------------------------------------------------------- pipeline

enum class GeneratorSource { external_dir, toy_procedural };
enum class TrainingOrder { real_then_synth, synth_then_real };

struct PipelineConfig {
  GeneratorSource generator_source = GeneratorSource::toy_procedural;
  std::string synthetic_dir;                    // for external_dir
  dataset::SyntheticSourceInfo synthetic_info;  // recorded, never executed
  int synthetic_count = 50;
  TrainingOrder order = TrainingOrder::synth_then_real;
  bool augment_real = true;
  bool augment_synth = false;
  int iterations = 1;
  double pseudo_label_threshold = 0.5;
  bool warm_start = false;  // retrain from the latest model instead of fresh weights

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Where the real data comes from. An empty drive_root selects the
// procedural substitute (toy retinas with their trees as ground truth).
struct DataConfig {
  std::string drive_root;
  int target_size = 512;
  int toy_train_count = 20;
  int toy_test_count = 20;
  // true: monitor training on the test split; false: hold out a fraction of train.
  bool validate_on_test = false;
  double validation_fraction = 0.1;

  void validate() const;
};

nlohmann::json to_json(const DataConfig& c);
DataConfig data_config_from_json(const nlohmann::json& j);

struct RealData {
  dataset::DatasetManifest train;
  dataset::DatasetManifest test;
};

// Loads and preprocesses the real train/test splits per `data`.
RealData load_real_data(const DataConfig& data, std::uint64_t seed);

struct TrainingSplits {
  dataset::DatasetManifest train;
  dataset::DatasetManifest validation;
  dataset::DatasetManifest test;
};

// Training / monitoring / test sets: either a seeded hold-out of the train
// split or the test split itself as the validation set.
TrainingSplits make_splits(RealData real, const DataConfig& data, std::uint64_t seed);

enum class Stage { base_train, generate, pseudo_label, retrain, finetune, done };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StageArtifact {
  int iteration = 0;  // 0 for base_train
  Stage stage = Stage::base_train;
  std::vector<std::string> paths;  // relative to the run directory
};

struct NamedReport {
  std::string name;
  metrics::MetricsReport report;
};

struct PipelineState {
  int iteration = 1;               // iteration of `stage`
  Stage stage = Stage::base_train;  // next stage to run; done when finished
  std::string config_hash;
  std::vector<StageArtifact> completed;
  std::vector<std::string> checkpoints;
  std::vector<NamedReport> reports;  // test-split reports, "base", "iteration_<k>"
  // Pooled F1 of pseudo-labels against the toy generator's trees, per iteration.
  std::vector<double> pseudo_label_reference_f1;
};

nlohmann::json to_json(const PipelineState& s);
PipelineState pipeline_state_from_json(const nlohmann::json& j);

struct PipelineRun {
  PipelineConfig pipeline;
  model::SAUNetConfig model;
  training::TrainConfig train;
  DataConfig data;
  std::filesystem::path run_dir;
  std::uint64_t seed = 0;
};

struct PipelineHooks {
  std::function<void(Stage, int)> on_stage_start;
  // Called after a stage's artifacts and the state file are written.
  std::function<void(Stage, int)> on_stage_complete;
  std::function<void(const std::string&)> log;
};

// Runs (1) base training on real data, then per iteration (2) synthetic
// acquisition, (3) pseudo-labeling with the latest model, (4) retraining on
// the first dataset of the configured order and (5) fine-tuning on the
// second. State is persisted in <run_dir>/state.json after every stage and
// a rerun resumes from the first incomplete stage. Finishes with a test
// report in <run_dir>/final_report.json.
PipelineState run_pipeline(const PipelineRun& run, const PipelineHooks& hooks = {});

// Hash of everything that determines a pipeline's results.
std::string config_hash(const PipelineRun& run);

}  // namespace retseg::pipeline

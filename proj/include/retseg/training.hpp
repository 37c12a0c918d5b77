#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "json.hpp"
#include "retseg/dataset.hpp"
#include "retseg/metrics.hpp"
#include "retseg/saunet.hpp"

namespace retseg::training {

inline constexpr double kDiceSmoothing = 1e-6;
inline constexpr double kProbabilityClamp = 1e-7;

struct LossWeights {
  double dice = 0.5;
  double bce = 0.5;
};

struct LossValue {
  double total = 0.0;
  double dice_term = 0.0;  // 1 - soft Dice
  double bce_term = 0.0;   // mean binary cross-entropy
  Tensor grad;             // d total / d pred; zero where pred was clamped
};

// w_dice * (1 - (2 sum(p g) + eps) / (sum p + sum g + eps)) + w_bce * BCE(p, g)
// with p clamped to [1e-7, 1 - 1e-7]. Sums run over the whole batch.
LossValue combined_loss_with_grad(const Tensor& pred, const Tensor& target, const LossWeights& w = {});
double combined_loss(const Tensor& pred, const Tensor& target, const LossWeights& w = {});

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void step(const std::vector<model::Parameter*>& params);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  long step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Halves (by default) the learning rate after `patience` epochs without a
// relative improvement of the monitored loss.
class ReduceOnPlateau {
 public:
  ReduceOnPlateau(double lr, double factor = 0.5, int patience = 10);
  // Returns the learning rate to use for the next epoch.
  double observe(double loss);
  double learning_rate() const { return lr_; }

 private:
  double lr_, factor_;
  int patience_;
  int wait_ = 0;
  double best_;
};

struct TrainConfig {
  int epochs_phase1 = 100;
  double lr_phase1 = 1e-3;
  int epochs_phase2 = 50;
  double lr_phase2 = 1e-4;
  int batch_size = 2;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  dataset::AugmentationSpec augmentation = dataset::AugmentationSpec::disabled();
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  double threshold = 0.5;  // binarization for validation metrics

  // Training from scratch: phase 1 must be non-empty.
  void validate() const;
  // Fine-tuning: zero epochs and zero learning rates are allowed.
  void validate_fine_tune() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRow {
  int epoch = 0;  // 1-based over both phases
  int phase = 1;
  double lr = 0.0;
  double loss = 0.0;        // mean training loss
  double train_dice = 0.0;  // hard Dice of training-mode predictions
  double val_loss = 0.0;
  metrics::MetricsReport validation;
};

struct TrainRecord {
  std::vector<EpochRow> rows;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_f1 = -1.0;
  std::filesystem::path best_checkpoint;  // empty without a checkpoint dir
  std::uint64_t final_fingerprint = 0;
};

// epoch,lr,loss,se,sp,acc,auc,f1,precision (validation metrics).
void write_csv(const TrainRecord& record, const std::filesystem::path& file);

struct TrainOptions {
  // When set, best.ckpt / last.ckpt (+ sidecars) and record.csv go here.
  std::filesystem::path checkpoint_dir;
  // Leave the network at the best-validation parameters instead of the last.
  bool restore_best = false;
  std::function<void(const EpochRow&)> on_epoch;
};

// Phase 1 (epochs_phase1 at lr_phase1) then phase 2 (epochs_phase2 at
// lr_phase2) with Adam, reduce-on-plateau on validation loss within each
// phase, Adam moments carried across the phase boundary. The best
// checkpoint is the epoch with the highest validation F1.
TrainRecord train(model::SAUNet& net, const dataset::DatasetManifest& data, const TrainConfig& cfg,
                  const dataset::DatasetManifest& validation, const TrainOptions& options = {});

// Loads `checkpoint` into `net` (CheckpointError on config mismatch) and
// continues with the same loop.
TrainRecord fine_tune(model::SAUNet& net, const std::filesystem::path& checkpoint,
                      const dataset::DatasetManifest& data, const TrainConfig& cfg,
                      const dataset::DatasetManifest& validation, const TrainOptions& options = {});

// Eval-mode probabilities for every sample, in batches.
std::vector<cv::Mat> predict_manifest(const model::SAUNet& net, const dataset::DatasetManifest& manifest,
                                      int batch_size = 2);

}  // namespace retseg::training

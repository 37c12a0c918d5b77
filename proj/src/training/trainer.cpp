#include <algorithm>
#include <fstream>
#include <numeric>

#include "retseg/batching.hpp"
#include "retseg/errors.hpp"
#include "retseg/parallel.hpp"
#include "retseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retseg::training {
namespace {

void require_labeled(const dataset::DatasetManifest& m, const char* what) {
  for (const auto& s : m.samples) {
    if (!s.labeled()) throw DataError(std::string(what) + " sample '" + s.id + "' has no vessel mask");
  }
}

double hard_dice(const Tensor& pred, const Tensor& target, double threshold) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool g = target[i] > 0.5;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 1.0;
}

json metrics_json(const EpochRow& row) {
  return {{"epoch", row.epoch},
          {"val_loss", row.val_loss},
          {"f1", row.validation.f1},
          {"auc", row.validation.auc},
          {"acc", row.validation.acc}};
}

TrainRecord run_loop(model::SAUNet& net, const dataset::DatasetManifest& data, const TrainConfig& cfg,
                     const dataset::DatasetManifest& validation, const TrainOptions& options) {
  require_labeled(data, "training");
  require_labeled(validation, "validation");
  if (validation.empty()) throw ConfigError("training needs a non-empty validation set");

  TrainRecord record;
  const int total_epochs = cfg.epochs_phase1 + cfg.epochs_phase2;
  if (total_epochs > 0 && data.empty()) throw EmptyManifestError("no training samples");

  const auto params = net.parameters();
  Adam adam(cfg.lr_phase1);
  const Tensor val_targets = total_epochs > 0 ? mask_tensor(validation.samples) : Tensor();
  const std::size_t n = data.size();
  std::uint64_t step = 0;
  model::SAUNet best = net;

  auto save = [&](const model::SAUNet& which, const char* name, int epoch) {
    if (options.checkpoint_dir.empty()) return fs::path();
    const fs::path path = options.checkpoint_dir / name;
    model::CheckpointMeta meta{epoch, cfg.seed, record.rows.empty() ? json::object() : metrics_json(record.rows.back())};
    model::save_checkpoint(which, path, meta);
    return path;
  };

  for (int phase = 1; phase <= 2; ++phase) {
    const int epochs = phase == 1 ? cfg.epochs_phase1 : cfg.epochs_phase2;
    if (epochs == 0) continue;
    ReduceOnPlateau plateau(phase == 1 ? cfg.lr_phase1 : cfg.lr_phase2, cfg.plateau_factor, cfg.plateau_patience);
    for (int e = 0; e < epochs; ++e) {
      EpochRow row;
      row.epoch = static_cast<int>(record.rows.size()) + 1;
      row.phase = phase;
      row.lr = plateau.learning_rate();
      adam.set_learning_rate(row.lr);

      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng = make_rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(row.epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double loss_sum = 0.0, dice_sum = 0.0;
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t count = std::min<std::size_t>(cfg.batch_size, n - start);
        std::vector<dataset::RetinalSample> batch(count);
        parallel_for(count, data_workers(), [&](std::size_t i) {
          const std::size_t idx = order[start + i];
          const std::uint64_t aug_seed =
              derive_seed(cfg.seed, "augment", static_cast<std::uint64_t>(row.epoch) * n + idx);
          batch[i] = dataset::augment(data.samples[idx], cfg.augmentation, aug_seed);
        });
        const Tensor x = image_tensor(batch);
        const Tensor y = mask_tensor(batch);
        net.zero_grad();
        const Tensor p = net.forward(x, true, derive_seed(cfg.seed, "dropblock-step", step++));
        const LossValue loss = combined_loss_with_grad(p, y, cfg.loss_weights);
        net.backward(loss.grad);
        adam.step(params);
        loss_sum += loss.total * static_cast<double>(count);
        dice_sum += hard_dice(p, y, cfg.threshold) * static_cast<double>(count);
      }
      row.loss = n > 0 ? loss_sum / static_cast<double>(n) : 0.0;
      row.train_dice = n > 0 ? dice_sum / static_cast<double>(n) : 0.0;

      const auto val_probs = predict_manifest(net, validation, cfg.batch_size);
      row.val_loss = combined_loss(stack_maps(val_probs), val_targets, cfg.loss_weights);
      row.validation = metrics::evaluate_predictions(val_probs, validation, {cfg.threshold, true});
      plateau.observe(row.val_loss);

      record.rows.push_back(row);
      if (row.validation.f1 > record.best_f1) {
        record.best_f1 = row.validation.f1;
        record.best_epoch = row.epoch;
        best = net;
        record.best_checkpoint = save(best, "best.ckpt", row.epoch);
      }
      if (options.on_epoch) options.on_epoch(row);
    }
  }
  if (!record.rows.empty()) {
    save(net, "last.ckpt", record.rows.back().epoch);
    if (options.restore_best) net = best;
    if (!options.checkpoint_dir.empty()) write_csv(record, options.checkpoint_dir / "record.csv");
  }
  record.final_fingerprint = net.fingerprint();
  return record;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs_phase1 <= 0) throw ConfigError("train.epochs_phase1 must be positive");
  if (epochs_phase2 < 0) throw ConfigError("train.epochs_phase2 must not be negative");
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) throw ConfigError("train learning rates must be positive");
  validate_fine_tune();
}

void TrainConfig::validate_fine_tune() const {
  if (epochs_phase1 < 0 || epochs_phase2 < 0) throw ConfigError("train epochs must not be negative");
  if (lr_phase1 < 0.0 || lr_phase2 < 0.0) throw ConfigError("train learning rates must not be negative");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (loss_weights.dice < 0 || loss_weights.bce < 0 || std::abs(loss_weights.dice + loss_weights.bce - 1.0) > 1e-9) {
    throw ConfigError("train.loss_weights must be nonnegative and sum to 1");
  }
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ConfigError("train.plateau_factor must be in (0,1]");
  if (plateau_patience < 1) throw ConfigError("train.plateau_patience must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("train.threshold must be in (0,1)");
}

json to_json(const TrainConfig& c) {
  return {{"epochs_phase1", c.epochs_phase1},
          {"lr_phase1", c.lr_phase1},
          {"epochs_phase2", c.epochs_phase2},
          {"lr_phase2", c.lr_phase2},
          {"batch_size", c.batch_size},
          {"loss_weights", {c.loss_weights.dice, c.loss_weights.bce}},
          {"seed", c.seed},
          {"augmentation", dataset::to_json(c.augmentation)},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"threshold", c.threshold}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs_phase1 = j.value("epochs_phase1", c.epochs_phase1);
  c.lr_phase1 = j.value("lr_phase1", c.lr_phase1);
  c.epochs_phase2 = j.value("epochs_phase2", c.epochs_phase2);
  c.lr_phase2 = j.value("lr_phase2", c.lr_phase2);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    if (!w.is_array() || w.size() != 2) throw ConfigError("train.loss_weights must be [w_dice, w_bce]");
    c.loss_weights = {w[0].get<double>(), w[1].get<double>()};
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("augmentation")) c.augmentation = dataset::augmentation_from_json(j.at("augmentation"));
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.threshold = j.value("threshold", c.threshold);
  c.validate_fine_tune();
  return c;
}

void write_csv(const TrainRecord& record, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << "epoch,lr,loss,se,sp,acc,auc,f1,precision\n";
  char buf[320];
  for (const auto& r : record.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.lr, r.loss,
                  r.validation.se, r.validation.sp, r.validation.acc, r.validation.auc, r.validation.f1,
                  r.validation.precision);
    out << buf;
  }
}

std::vector<cv::Mat> predict_manifest(const model::SAUNet& net, const dataset::DatasetManifest& manifest,
                                      int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  const std::span<const dataset::RetinalSample> all(manifest.samples);
  const std::size_t batches = (all.size() + batch_size - 1) / batch_size;
  std::vector<cv::Mat> out(all.size());
  parallel_for(batches, data_workers(), [&](std::size_t b) {
    const std::size_t start = b * batch_size;
    const std::size_t count = std::min<std::size_t>(batch_size, all.size() - start);
    auto maps = probability_maps(net.predict(image_tensor(all.subspan(start, count))));
    for (std::size_t i = 0; i < count; ++i) out[start + i] = std::move(maps[i]);
  });
  return out;
}

TrainRecord train(model::SAUNet& net, const dataset::DatasetManifest& data, const TrainConfig& cfg,
                  const dataset::DatasetManifest& validation, const TrainOptions& options) {
  cfg.validate();
  if (data.empty()) throw EmptyManifestError("no training samples");
  return run_loop(net, data, cfg, validation, options);
}

TrainRecord fine_tune(model::SAUNet& net, const fs::path& checkpoint, const dataset::DatasetManifest& data,
                      const TrainConfig& cfg, const dataset::DatasetManifest& validation,
                      const TrainOptions& options) {
  cfg.validate_fine_tune();
  model::load_checkpoint_into(net, checkpoint);
  return run_loop(net, data, cfg, validation, options);
}

}  // namespace retseg::training

#include <cstdio>
#include <fstream>

#include "retseg/errors.hpp"
#include "retseg/pipeline.hpp"
#include "retseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retseg::pipeline {
namespace {

std::string to_string(GeneratorSource g) {
  return g == GeneratorSource::external_dir ? "external_dir" : "toy_procedural";
}

GeneratorSource generator_from_string(const std::string& s) {
  if (s == "external_dir") return GeneratorSource::external_dir;
  if (s == "toy_procedural") return GeneratorSource::toy_procedural;
  throw ConfigError("unknown pipeline.generator_source '" + s + "'");
}

std::string to_string(TrainingOrder o) {
  return o == TrainingOrder::real_then_synth ? "real_then_synth" : "synth_then_real";
}

TrainingOrder order_from_string(const std::string& s) {
  if (s == "real_then_synth") return TrainingOrder::real_then_synth;
  if (s == "synth_then_real") return TrainingOrder::synth_then_real;
  throw ConfigError("unknown pipeline.order '" + s + "'");
}

void write_text_atomic(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, file);
}

dataset::AugmentationSpec augmentation_for(bool enabled, const training::TrainConfig& train) {
  if (!enabled) return dataset::AugmentationSpec::disabled();
  return train.augmentation.enabled ? train.augmentation : dataset::AugmentationSpec{};
}

std::string iteration_dir(int k) { return "iter" + std::to_string(k); }

// Stage execution with the state file as the single source of progress.
class Runner {
 public:
  Runner(const PipelineRun& run, const PipelineHooks& hooks) : run_(run), hooks_(hooks) {}

  PipelineState execute() {
    run_.pipeline.validate();
    run_.model.validate();
    run_.train.validate();
    run_.data.validate();
    fs::create_directories(run_.run_dir);
    state_ = resume_or_start();
    if (state_.stage == Stage::done) {
      log("pipeline already complete");
      return state_;
    }
    load_real();
    while (state_.stage != Stage::done) {
      const Stage stage = state_.stage;
      const int k = state_.iteration;
      if (hooks_.on_stage_start) hooks_.on_stage_start(stage, k);
      log("stage " + to_string(stage) + " (iteration " + std::to_string(k) + ")");
      StageArtifact artifact{stage == Stage::base_train ? 0 : k, stage, {}};
      switch (stage) {
        case Stage::base_train: base_train(artifact); break;
        case Stage::generate: generate(k, artifact); break;
        case Stage::pseudo_label: label(k, artifact); break;
        case Stage::retrain: retrain(k, artifact); break;
        case Stage::finetune: finetune(k, artifact); break;
        case Stage::done: break;
      }
      state_.completed.push_back(artifact);
      advance();
      if (state_.stage == Stage::done) write_final_report();
      save_state();
      if (hooks_.on_stage_complete) hooks_.on_stage_complete(stage, k);
    }
    return state_;
  }

 private:
  fs::path state_file() const { return run_.run_dir / "state.json"; }
  fs::path abs(const std::string& rel) const { return run_.run_dir / rel; }

  void log(const std::string& message) const {
    if (hooks_.log) hooks_.log(message);
  }

  PipelineState resume_or_start() {
    const std::string hash = config_hash(run_);
    if (fs::exists(state_file())) {
      std::ifstream in(state_file());
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("unreadable pipeline state " + state_file().string() + ": " + e.what());
      }
      PipelineState s = pipeline_state_from_json(j);
      if (s.config_hash != hash) {
        throw ConfigError("run directory " + run_.run_dir.string() +
                          " holds a pipeline with a different configuration; use a fresh --out");
      }
      log("resuming at " + to_string(s.stage) + " (iteration " + std::to_string(s.iteration) + ")");
      return s;
    }
    PipelineState s;
    s.config_hash = hash;
    return s;
  }

  void save_state() const { write_text_atomic(state_file(), to_json(state_).dump(2) + "\n"); }

  void advance() {
    switch (state_.stage) {
      case Stage::base_train: state_.stage = Stage::generate; break;
      case Stage::generate: state_.stage = Stage::pseudo_label; break;
      case Stage::pseudo_label: state_.stage = Stage::retrain; break;
      case Stage::retrain: state_.stage = Stage::finetune; break;
      case Stage::finetune:
        if (state_.iteration < run_.pipeline.iterations) {
          ++state_.iteration;
          state_.stage = Stage::generate;
        } else {
          state_.stage = Stage::done;
        }
        break;
      case Stage::done: break;
    }
  }

  void load_real() {
    auto splits = make_splits(load_real_data(run_.data, run_.seed), run_.data, run_.seed);
    train_ = std::move(splits.train);
    validation_ = std::move(splits.validation);
    test_ = std::move(splits.test);
  }

  training::TrainConfig stage_train_config(const std::string& stage, int k, bool augmentation) const {
    training::TrainConfig cfg = run_.train;
    cfg.seed = derive_seed(run_.seed, "stage:" + stage, static_cast<std::uint64_t>(k));
    cfg.augmentation = augmentation_for(augmentation, run_.train);
    return cfg;
  }

  std::uint64_t init_seed(const std::string& stage, int k) const {
    return derive_seed(run_.seed, "init:" + stage, static_cast<std::uint64_t>(k));
  }

  void record_training(const std::string& dir, StageArtifact& artifact) {
    for (const char* name : {"best.ckpt", "last.ckpt", "record.csv"}) {
      if (fs::exists(abs(dir) / name)) artifact.paths.push_back(dir + "/" + name);
    }
  }

  void report(const std::string& name, const model::SAUNet& net) {
    auto shared = std::make_shared<const model::SAUNet>(net);
    metrics::EvaluationOptions opts;
    opts.threshold = run_.train.threshold;
    state_.reports.push_back({name, evaluate_model(make_predictor(shared), test_, opts, run_.train.batch_size)});
    log(name + " test F1 " + std::to_string(state_.reports.back().report.f1));
  }

  // (1) train on real data with the full two-phase schedule.
  void base_train(StageArtifact& artifact) {
    model::SAUNet net(run_.model, init_seed("base_train", 0));
    training::TrainOptions opts;
    opts.checkpoint_dir = abs("base");
    opts.restore_best = true;
    training::train(net, train_, stage_train_config("base_train", 0, run_.pipeline.augment_real), validation_, opts);
    record_training("base", artifact);
    state_.checkpoints.push_back("base/best.ckpt");
    report("base", net);
  }

  // (2) acquire synthetic images into <iter>/synthetic.
  void generate(int k, StageArtifact& artifact) {
    const std::string dir = iteration_dir(k) + "/synthetic";
    dataset::DatasetManifest synth;
    if (run_.pipeline.generator_source == GeneratorSource::toy_procedural) {
      synth = toy_synthetic(k).manifest;
    } else {
      dataset::DatasetManifest all =
          dataset::load_synthetic_images(run_.pipeline.synthetic_dir, run_.pipeline.synthetic_info);
      if (static_cast<int>(all.size()) < run_.pipeline.synthetic_count) {
        throw InsufficientSamplesError("pipeline.synthetic_count is " + std::to_string(run_.pipeline.synthetic_count) +
                                       " but " + run_.pipeline.synthetic_dir + " holds " +
                                       std::to_string(all.size()) + " readable images");
      }
      for (const auto& w : all.warnings) log("warning: " + w);
      synth.split = all.split;
      synth.metadata = all.metadata;
      synth.warnings = all.warnings;
      for (int i = 0; i < run_.pipeline.synthetic_count; ++i) {
        dataset::RetinalSample s = all.samples[i];
        if (s.vessel_mask) {
          log("dropping existing labels of '" + s.id + "': synthetic images are pseudo-labeled");
          s.vessel_mask.reset();
        }
        synth.add(std::move(s));
      }
      synth = dataset::preprocess(synth, run_.data.target_size);
    }
    dataset::write_prepared(synth, abs(dir));
    artifact.paths.push_back(dir + "/manifest.json");
  }

  ToyDataset toy_synthetic(int k) const {
    return toy_generate(run_.pipeline.synthetic_count, derive_seed(run_.seed, "toy-synthetic", k),
                        run_.data.target_size);
  }

  // (3) label the synthetic images with the latest model.
  void label(int k, StageArtifact& artifact) {
    const std::string dir = "pseudo_labels/" + iteration_dir(k);
    const auto synth = dataset::read_manifest(abs(iteration_dir(k) + "/synthetic/manifest.json"));
    auto latest = model::load_checkpoint(abs(state_.checkpoints.back()));
    auto net = std::make_shared<const model::SAUNet>(std::move(latest.net));
    const auto result = pseudo_label(make_predictor(net), synth, run_.pipeline.pseudo_label_threshold,
                                     run_.train.batch_size);
    write_pseudo_labels(result, abs(dir));
    artifact.paths.push_back(dir + "/manifest.json");
    if (run_.pipeline.generator_source == GeneratorSource::toy_procedural) {
      const ToyDataset toy = toy_synthetic(k);
      metrics::ConfusionCounts counts;
      for (std::size_t i = 0; i < toy.reference_masks.size(); ++i) {
        counts += metrics::confusion(*result.labeled.samples[i].vessel_mask, toy.reference_masks[i],
                                     toy.manifest.samples[i].fov_mask);
      }
      state_.pseudo_label_reference_f1.push_back(metrics::scalar_metrics(counts).f1);
      log("pseudo-label F1 against the generated trees " + std::to_string(state_.pseudo_label_reference_f1.back()));
    }
  }

  dataset::DatasetManifest pseudo_labeled(int k) const {
    return dataset::read_manifest(abs("pseudo_labels/" + iteration_dir(k) + "/manifest.json"));
  }

  bool synth_first() const { return run_.pipeline.order == TrainingOrder::synth_then_real; }

  // (4) retrain the network from scratch (or warm) on the first dataset.
  void retrain(int k, StageArtifact& artifact) {
    const std::string dir = iteration_dir(k) + "/retrain";
    model::SAUNet net(run_.model, init_seed("retrain", k));
    if (run_.pipeline.warm_start) model::load_checkpoint_into(net, abs(state_.checkpoints.back()));
    const auto data = synth_first() ? pseudo_labeled(k) : train_;
    training::TrainConfig cfg =
        stage_train_config("retrain", k, synth_first() ? run_.pipeline.augment_synth : run_.pipeline.augment_real);
    cfg.epochs_phase2 = 0;
    training::TrainOptions opts;
    opts.checkpoint_dir = abs(dir);
    opts.restore_best = true;
    training::train(net, data, cfg, validation_, opts);
    record_training(dir, artifact);
  }

  // (5) final epochs on the second dataset, starting from the retrained model.
  void finetune(int k, StageArtifact& artifact) {
    const std::string dir = iteration_dir(k) + "/finetune";
    const auto data = synth_first() ? train_ : pseudo_labeled(k);
    training::TrainConfig cfg =
        stage_train_config("finetune", k, synth_first() ? run_.pipeline.augment_real : run_.pipeline.augment_synth);
    cfg.epochs_phase1 = 0;
    model::SAUNet net(run_.model, init_seed("finetune", k));
    training::TrainOptions opts;
    opts.checkpoint_dir = abs(dir);
    opts.restore_best = true;
    const auto record =
        training::fine_tune(net, abs(iteration_dir(k) + "/retrain/best.ckpt"), data, cfg, validation_, opts);
    if (record.rows.empty()) model::save_checkpoint(net, abs(dir) / "best.ckpt", {0, cfg.seed, json::object()});
    record_training(dir, artifact);
    state_.checkpoints.push_back(dir + "/best.ckpt");
    report("iteration_" + std::to_string(k), net);
  }

  void write_final_report() const {
    json reports = json::array();
    for (const auto& r : state_.reports) reports.push_back(metrics::to_json(r.report, r.name));
    json j{{"config_hash", state_.config_hash},
           {"final", metrics::to_json(state_.reports.back().report, state_.reports.back().name)},
           {"reports", reports},
           {"checkpoints", state_.checkpoints},
           {"pseudo_label_reference_f1", state_.pseudo_label_reference_f1}};
    write_text_atomic(run_.run_dir / "final_report.json", j.dump(2) + "\n");
    std::string csv = metrics::csv_header() + "\n";
    for (const auto& r : state_.reports) csv += metrics::csv_row(r.report, r.name) + "\n";
    write_text_atomic(run_.run_dir / "report.csv", csv);
  }

  const PipelineRun& run_;
  const PipelineHooks& hooks_;
  PipelineState state_;
  dataset::DatasetManifest train_, validation_, test_;
};

}  // namespace

void PipelineConfig::validate() const {
  if (synthetic_count < 1) throw ConfigError("pipeline.synthetic_count must be positive");
  if (iterations < 1) throw ConfigError("pipeline.iterations must be >= 1");
  if (!(pseudo_label_threshold > 0.0 && pseudo_label_threshold < 1.0)) {
    throw ConfigError("pipeline.pseudo_label_threshold must be in (0,1)");
  }
  if (generator_source == GeneratorSource::external_dir && synthetic_dir.empty()) {
    throw ConfigError("pipeline.synthetic_dir is required with generator_source external_dir");
  }
}

json to_json(const PipelineConfig& c) {
  json info{{"generator", c.synthetic_info.generator},
            {"truncation", c.synthetic_info.truncation ? json(*c.synthetic_info.truncation) : json(nullptr)}};
  return {{"generator_source", to_string(c.generator_source)},
          {"synthetic_dir", c.synthetic_dir},
          {"synthetic_info", info},
          {"synthetic_count", c.synthetic_count},
          {"order", to_string(c.order)},
          {"augment_real", c.augment_real},
          {"augment_synth", c.augment_synth},
          {"iterations", c.iterations},
          {"pseudo_label_threshold", c.pseudo_label_threshold},
          {"warm_start", c.warm_start}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  if (j.contains("generator_source")) c.generator_source = generator_from_string(j.at("generator_source"));
  c.synthetic_dir = j.value("synthetic_dir", c.synthetic_dir);
  if (j.contains("synthetic_info")) {
    const auto& info = j.at("synthetic_info");
    c.synthetic_info.generator = info.value("generator", c.synthetic_info.generator);
    if (info.contains("truncation")) {
      c.synthetic_info.truncation =
          info.at("truncation").is_null() ? std::nullopt : std::optional<double>(info.at("truncation").get<double>());
    }
  }
  c.synthetic_count = j.value("synthetic_count", c.synthetic_count);
  if (j.contains("order")) c.order = order_from_string(j.at("order"));
  c.augment_real = j.value("augment_real", c.augment_real);
  c.augment_synth = j.value("augment_synth", c.augment_synth);
  c.iterations = j.value("iterations", c.iterations);
  c.pseudo_label_threshold = j.value("pseudo_label_threshold", c.pseudo_label_threshold);
  c.warm_start = j.value("warm_start", c.warm_start);
  c.validate();
  return c;
}

void DataConfig::validate() const {
  if (!dataset::is_power_of_two(target_size)) {
    throw ConfigError("data.target_size must be a power of two, got " + std::to_string(target_size));
  }
  if (drive_root.empty() && (toy_train_count < 2 || toy_test_count < 1)) {
    throw ConfigError("data.toy_train_count must be >= 2 and data.toy_test_count >= 1");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("data.validation_fraction must be in (0,1)");
  }
}

json to_json(const DataConfig& c) {
  return {{"drive_root", c.drive_root},
          {"target_size", c.target_size},
          {"toy_train_count", c.toy_train_count},
          {"toy_test_count", c.toy_test_count},
          {"validate_on_test", c.validate_on_test},
          {"validation_fraction", c.validation_fraction}};
}

DataConfig data_config_from_json(const json& j) {
  DataConfig c;
  c.drive_root = j.value("drive_root", c.drive_root);
  c.target_size = j.value("target_size", c.target_size);
  c.toy_train_count = j.value("toy_train_count", c.toy_train_count);
  c.toy_test_count = j.value("toy_test_count", c.toy_test_count);
  c.validate_on_test = j.value("validate_on_test", c.validate_on_test);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.validate();
  return c;
}

RealData load_real_data(const DataConfig& data, std::uint64_t seed) {
  data.validate();
  RealData out;
  if (!data.drive_root.empty()) {
    out.train = dataset::preprocess(dataset::load_drive_dataset(data.drive_root, dataset::Split::train),
                                    data.target_size);
    out.test = dataset::preprocess(dataset::load_drive_dataset(data.drive_root, dataset::Split::test),
                                   data.target_size);
    return out;
  }
  auto toy_split = [&](int count, const char* tag, dataset::Split split) {
    ToyDataset toy = toy_generate(count, derive_seed(seed, tag), data.target_size);
    dataset::DatasetManifest m = std::move(toy.manifest);
    m.split = split;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m.samples[i].id = std::string(tag) + m.samples[i].id.substr(3);
      m.samples[i].source = dataset::Source::real;
      m.samples[i].vessel_mask = toy.reference_masks[i];
    }
    return m;
  };
  out.train = toy_split(data.toy_train_count, "real-train", dataset::Split::train);
  out.test = toy_split(data.toy_test_count, "real-test", dataset::Split::test);
  return out;
}

TrainingSplits make_splits(RealData real, const DataConfig& data, std::uint64_t seed) {
  TrainingSplits out;
  out.test = std::move(real.test);
  if (data.validate_on_test) {
    out.train = std::move(real.train);
    out.validation = out.test;
  } else {
    auto [kept, held] =
        dataset::split_holdout(real.train, data.validation_fraction, derive_seed(seed, "validation-holdout"));
    out.train = std::move(kept);
    out.validation = std::move(held);
  }
  return out;
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::base_train: return "base_train";
    case Stage::generate: return "generate";
    case Stage::pseudo_label: return "pseudo_label";
    case Stage::retrain: return "retrain";
    case Stage::finetune: return "finetune";
    case Stage::done: return "done";
  }
  return "done";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::base_train, Stage::generate, Stage::pseudo_label, Stage::retrain, Stage::finetune,
                   Stage::done}) {
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown pipeline stage '" + s + "'");
}

json to_json(const PipelineState& s) {
  json completed = json::array();
  for (const auto& a : s.completed) {
    completed.push_back({{"iteration", a.iteration}, {"stage", to_string(a.stage)}, {"paths", a.paths}});
  }
  json reports = json::array();
  for (const auto& r : s.reports) reports.push_back(metrics::to_json(r.report, r.name));
  return {{"iteration", s.iteration},
          {"stage", to_string(s.stage)},
          {"config_hash", s.config_hash},
          {"completed", completed},
          {"checkpoints", s.checkpoints},
          {"reports", reports},
          {"pseudo_label_reference_f1", s.pseudo_label_reference_f1}};
}

PipelineState pipeline_state_from_json(const json& j) {
  PipelineState s;
  try {
    s.iteration = j.at("iteration").get<int>();
    s.stage = stage_from_string(j.at("stage").get<std::string>());
    s.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& a : j.at("completed")) {
      s.completed.push_back({a.at("iteration").get<int>(), stage_from_string(a.at("stage").get<std::string>()),
                             a.at("paths").get<std::vector<std::string>>()});
    }
    s.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    for (const auto& r : j.at("reports")) {
      s.reports.push_back({r.at("method").get<std::string>(), metrics::report_from_json(r)});
    }
    s.pseudo_label_reference_f1 = j.value("pseudo_label_reference_f1", std::vector<double>{});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed pipeline state: ") + e.what());
  }
  return s;
}

std::string config_hash(const PipelineRun& run) {
  const json j{{"pipeline", to_json(run.pipeline)},
               {"model", model::to_json(run.model)},
               {"train", training::to_json(run.train)},
               {"data", to_json(run.data)},
               {"seed", run.seed}};
  const std::string text = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
  return buf;
}

PipelineState run_pipeline(const PipelineRun& run, const PipelineHooks& hooks) {
  return Runner(run, hooks).execute();
}

}  // namespace retseg::pipeline

#include <fstream>
#include <iostream>
#include <sstream>

#include <opencv2/core.hpp>

#include "CLI11.hpp"
#include "retseg/cli.hpp"
#include "retseg/errors.hpp"
#include "retseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retseg::cli {
namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool json = false;
  std::optional<double> threshold;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "run configuration (JSON)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_flag("--json", f.json, "print the report as JSON on stdout");
  cmd->add_option("--threshold", f.threshold, "binarization threshold (>= is positive)");
}

class Context {
 public:
  Context(const CommonFlags& flags, std::ostream& out, std::ostream& err) : flags_(flags), out_(out), err_(err) {
    if (!flags.config.empty()) cfg = load_run_config(flags.config);
    if (!flags.out.empty()) cfg.out = flags.out;
    if (flags.seed) cfg.seed = *flags.seed;
  }

  RunConfig cfg;

  fs::path out_dir() const { return cfg.out; }
  bool json_output() const { return flags_.json; }
  std::optional<double> threshold() const { return flags_.threshold; }
  std::ostream& out() const { return out_; }

  void log(const std::string& message) const { err_ << "[retseg] " << message << std::endl; }

  // The resolved configuration replays the run when passed back via --config.
  void snapshot(const std::string& command, const json& extra = json::object()) const {
    cfg.validate();
    fs::create_directories(out_dir());
    write_json(out_dir() / "resolved_config.json", to_json(cfg));
    json invocation = extra;
    invocation["command"] = command;
    write_json(out_dir() / "invocation.json", invocation);
  }

  static void write_json(const fs::path& file, const json& j) {
    std::ofstream f(file);
    if (!f) throw IoError("cannot write " + file.string());
    f << j.dump(2) << "\n";
  }

  void emit_report(const metrics::MetricsReport& r, const std::string& method) const {
    const json j = metrics::to_json(r, method);
    write_json(out_dir() / "report.json", j);
    std::ofstream csv(out_dir() / "report.csv");
    csv << metrics::csv_header() << "\n" << metrics::csv_row(r, method) << "\n";
    if (json_output()) {
      out_ << j.dump(2) << "\n";
    } else {
      out_ << metrics::csv_header() << "\n" << metrics::csv_row(r, method) << "\n";
    }
  }

 private:
  const CommonFlags& flags_;
  std::ostream& out_;
  std::ostream& err_;
};

dataset::DatasetManifest fit_size(dataset::DatasetManifest m, int target_size) {
  if (m.target_size == target_size) return m;
  return dataset::preprocess(m, target_size);
}

// `train` / `test` select a split of the configured data source. Otherwise
// the argument is a manifest file, a directory holding manifest.json, a
// prepared directory with <split>/manifest.json, or a DRIVE root.
dataset::DatasetManifest load_split(const Context& ctx, const std::string& spec, dataset::Split split) {
  const int size = ctx.cfg.data.target_size;
  if (spec.empty() || spec == "train" || spec == "test") {
    const auto which = spec.empty() ? split : dataset::split_from_string(spec);
    auto real = pipeline::load_real_data(ctx.cfg.data, ctx.cfg.seed);
    return which == dataset::Split::train ? std::move(real.train) : std::move(real.test);
  }
  const fs::path p(spec);
  if (!fs::exists(p)) throw ConfigError("--data: path does not exist: " + spec);
  if (fs::is_regular_file(p)) return fit_size(dataset::read_manifest(p), size);
  if (fs::is_regular_file(p / "manifest.json")) return fit_size(dataset::read_manifest(p / "manifest.json"), size);
  const fs::path prepared = p / dataset::to_string(split) / "manifest.json";
  if (fs::is_regular_file(prepared)) return fit_size(dataset::read_manifest(prepared), size);
  return dataset::preprocess(dataset::load_drive_dataset(p, split), size);
}

// A manifest (file or directory containing one) or a plain image directory.
dataset::DatasetManifest load_images(const std::string& spec) {
  const fs::path p(spec);
  if (!fs::exists(p)) throw ConfigError("path does not exist: " + spec);
  if (fs::is_regular_file(p)) return dataset::read_manifest(p);
  if (fs::is_regular_file(p / "manifest.json")) return dataset::read_manifest(p / "manifest.json");
  return dataset::load_synthetic_images(p);
}

pipeline::Predictor checkpoint_predictor(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("--checkpoint: file not found: " + path);
  auto loaded = model::load_checkpoint(path);
  return pipeline::make_predictor(std::make_shared<const model::SAUNet>(std::move(loaded.net)));
}

metrics::EvaluationOptions eval_options(const Context& ctx, double fallback) {
  metrics::EvaluationOptions opts;
  opts.threshold = ctx.threshold().value_or(fallback);
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) throw ConfigError("--threshold must be in (0,1)");
  return opts;
}

void cmd_prepare(Context& ctx, const std::string& drive_root, std::optional<int> size) {
  if (!drive_root.empty()) ctx.cfg.data.drive_root = drive_root;
  if (size) ctx.cfg.data.target_size = *size;
  if (ctx.cfg.data.drive_root.empty()) throw ConfigError("prepare: --drive-root is required");
  if (!fs::is_directory(ctx.cfg.data.drive_root)) {
    throw ConfigError("prepare: dataset root does not exist: " + ctx.cfg.data.drive_root);
  }
  if (!dataset::is_power_of_two(ctx.cfg.data.target_size)) {
    throw ConfigError("prepare: --size must be a power of two, got " + std::to_string(ctx.cfg.data.target_size));
  }
  ctx.snapshot("prepare");
  const auto real = pipeline::load_real_data(ctx.cfg.data, ctx.cfg.seed);
  dataset::write_prepared(real.train, ctx.out_dir() / "train");
  dataset::write_prepared(real.test, ctx.out_dir() / "test");
  const json summary{{"train", real.train.size()},
                     {"test", real.test.size()},
                     {"target_size", ctx.cfg.data.target_size},
                     {"out", ctx.out_dir().string()}};
  ctx.log("prepared " + std::to_string(real.train.size()) + " train and " + std::to_string(real.test.size()) +
          " test samples");
  if (ctx.json_output()) ctx.out() << summary.dump(2) << "\n";
}

void cmd_train(Context& ctx, const std::string& data) {
  if (ctx.threshold()) ctx.cfg.train.threshold = *ctx.threshold();
  ctx.cfg.validate_paths();
  ctx.snapshot("train", {{"data", data}});
  pipeline::RealData real;
  if (data.empty()) {
    real = pipeline::load_real_data(ctx.cfg.data, ctx.cfg.seed);
  } else {
    real.train = load_split(ctx, data, dataset::Split::train);
    real.test = load_split(ctx, data, dataset::Split::test);
  }
  auto splits = pipeline::make_splits(std::move(real), ctx.cfg.data, ctx.cfg.seed);
  training::TrainConfig tc = ctx.cfg.train;
  tc.seed = derive_seed(ctx.cfg.seed, "stage:train");
  model::SAUNet net(ctx.cfg.model, derive_seed(ctx.cfg.seed, "init:train"));
  training::TrainOptions opts;
  opts.checkpoint_dir = ctx.out_dir();
  opts.restore_best = true;
  opts.on_epoch = [&](const training::EpochRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d lr %.3g loss %.5f val_loss %.5f val_f1 %.4f", row.epoch, row.lr, row.loss,
                  row.val_loss, row.validation.f1);
    ctx.log(buf);
  };
  const auto record = training::train(net, splits.train, tc, splits.validation, opts);
  ctx.log("best epoch " + std::to_string(record.best_epoch) + " (validation F1 " + std::to_string(record.best_f1) +
          ")");
  auto shared = std::make_shared<const model::SAUNet>(std::move(net));
  const auto report = pipeline::evaluate_model(pipeline::make_predictor(shared), splits.test,
                                               eval_options(ctx, tc.threshold), tc.batch_size);
  ctx.emit_report(report, "sa-unet");
}

void cmd_pipeline(Context& ctx) {
  ctx.cfg.validate_paths();
  ctx.snapshot("pipeline");
  pipeline::PipelineRun run{ctx.cfg.pipeline, ctx.cfg.model, ctx.cfg.train, ctx.cfg.data, ctx.out_dir(),
                            ctx.cfg.seed};
  pipeline::PipelineHooks hooks;
  hooks.log = [&](const std::string& m) { ctx.log(m); };
  const auto state = pipeline::run_pipeline(run, hooks);
  const auto& final_report = state.reports.back();
  if (ctx.json_output()) {
    std::ifstream in(ctx.out_dir() / "final_report.json");
    ctx.out() << in.rdbuf();
  } else {
    ctx.out() << metrics::csv_header() << "\n";
    for (const auto& r : state.reports) ctx.out() << metrics::csv_row(r.report, r.name) << "\n";
  }
  ctx.log("done; final F1 " + std::to_string(final_report.report.f1));
}

void cmd_pseudolabel(Context& ctx, const std::string& checkpoint, const std::string& images) {
  if (ctx.threshold()) ctx.cfg.pipeline.pseudo_label_threshold = *ctx.threshold();
  const std::string source = images.empty() ? ctx.cfg.pipeline.synthetic_dir : images;
  if (source.empty()) throw ConfigError("pseudolabel: --images (or pipeline.synthetic_dir) is required");
  ctx.snapshot("pseudolabel", {{"checkpoint", checkpoint}, {"images", source}});
  const auto predictor = checkpoint_predictor(checkpoint);
  auto synth = fit_size(load_images(source), ctx.cfg.data.target_size);
  for (const auto& w : synth.warnings) ctx.log("warning: " + w);
  const auto result =
      pipeline::pseudo_label(predictor, synth, ctx.cfg.pipeline.pseudo_label_threshold, ctx.cfg.train.batch_size);
  pipeline::write_pseudo_labels(result, ctx.out_dir());
  const json summary{{"labeled", result.labeled.size()},
                     {"threshold", ctx.cfg.pipeline.pseudo_label_threshold},
                     {"manifest", (ctx.out_dir() / "manifest.json").string()}};
  ctx.log("pseudo-labeled " + std::to_string(result.labeled.size()) + " images");
  if (ctx.json_output()) ctx.out() << summary.dump(2) << "\n";
}

void cmd_evaluate(Context& ctx, const std::string& checkpoint, const std::string& data, bool full_frame) {
  ctx.cfg.validate_paths();
  ctx.snapshot("evaluate", {{"checkpoint", checkpoint}, {"data", data}});
  const auto predictor = checkpoint_predictor(checkpoint);
  const auto test = load_split(ctx, data, dataset::Split::test);
  auto opts = eval_options(ctx, ctx.cfg.train.threshold);
  opts.fov_only = !full_frame;
  ctx.emit_report(pipeline::evaluate_model(predictor, test, opts, ctx.cfg.train.batch_size), "sa-unet");
}

void cmd_ensemble(Context& ctx, const std::vector<std::string>& members, const std::string& mode,
                  const std::string& data) {
  pipeline::EnsembleSpec spec = ctx.cfg.ensemble.value_or(pipeline::EnsembleSpec{});
  if (!members.empty()) spec.members = members;
  if (!mode.empty()) spec.mode = pipeline::fusion_mode_from_string(mode);
  if (ctx.threshold()) spec.threshold = *ctx.threshold();
  ctx.cfg.ensemble = spec;
  ctx.cfg.validate_paths();
  ctx.snapshot("ensemble", {{"data", data}});
  const auto ensemble = pipeline::Ensemble::from_spec(spec);
  const auto test = load_split(ctx, data, dataset::Split::test);
  metrics::EvaluationOptions opts;
  opts.threshold = spec.threshold;
  ctx.emit_report(pipeline::evaluate_model(ensemble.as_predictor(), test, opts, ctx.cfg.train.batch_size),
                  "ensemble-" + pipeline::to_string(spec.mode));
}

void cmd_fid(Context& ctx, const std::string& a, const std::string& b, const std::string& extractor_name) {
  ctx.snapshot("fid", {{"a", a}, {"b", b}, {"extractor", extractor_name}});
  const auto extractor = metrics::extractor_by_name(extractor_name);
  auto stats = [&](const std::string& spec) {
    const auto m = load_images(spec);
    std::vector<cv::Mat> images;
    for (const auto& s : m.samples) images.push_back(s.image);
    return metrics::feature_stats(images, extractor);
  };
  const auto sa = stats(a);
  const auto sb = stats(b);
  const json j{{"value", metrics::fid(sa, sb)}, {"extractor", extractor_name}, {"n_a", sa.n}, {"n_b", sb.n}};
  Context::write_json(ctx.out_dir() / "fid.json", j);
  if (ctx.json_output()) {
    ctx.out() << j.dump(2) << "\n";
  } else {
    ctx.out() << "fid " << j["value"].get<double>() << "\n";
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retinal vessel segmentation with SA-UNet and synthetic-data pseudo-labeling"};
  app.require_subcommand(1);
  CommonFlags flags;

  std::string drive_root, data, checkpoint, images, mode, fid_a, fid_b, extractor = "raw";
  std::optional<int> size;
  std::vector<std::string> members;
  bool full_frame = false;

  auto* prepare = app.add_subcommand("prepare", "resize a DRIVE-layout dataset and write manifests");
  add_common(prepare, flags);
  prepare->add_option("--drive-root", drive_root, "DRIVE root with training/ and test/");
  prepare->add_option("--size", size, "square target size (power of two)");

  auto* train = app.add_subcommand("train", "train SA-UNet on real data and evaluate on the test split");
  add_common(train, flags);
  train->add_option("--data", data, "prepared directory or DRIVE root (default: config data)");

  auto* pipe = app.add_subcommand("pipeline", "base train, generate, pseudo-label, retrain, fine-tune");
  add_common(pipe, flags);

  auto* pseudo = app.add_subcommand("pseudolabel", "label unlabeled images with a trained checkpoint");
  add_common(pseudo, flags);
  pseudo->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  pseudo->add_option("--images", images, "image directory or manifest");

  auto* evaluate = app.add_subcommand("evaluate", "pooled metrics of a checkpoint on labeled data");
  add_common(evaluate, flags);
  evaluate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  evaluate->add_option("--data", data, "train, test, a manifest, a prepared directory or a DRIVE root");
  evaluate->add_flag("--full-frame", full_frame, "count pixels outside the field of view too");

  auto* ensemble = app.add_subcommand("ensemble", "evaluate a fused ensemble of checkpoints");
  add_common(ensemble, flags);
  ensemble->add_option("--members", members, "checkpoints, comma separated")->delimiter(',');
  ensemble->add_option("--mode", mode, "mean, max, min or vote");
  ensemble->add_option("--data", data, "train, test, a manifest, a prepared directory or a DRIVE root");

  auto* fid = app.add_subcommand("fid", "Frechet distance between two image sets");
  add_common(fid, flags);
  fid->add_option("--a", fid_a, "first image set")->required();
  fid->add_option("--b", fid_b, "second image set")->required();
  fid->add_option("--extractor", extractor, "feature extractor name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    Context ctx(flags, out, err);
    if (*prepare) cmd_prepare(ctx, drive_root, size);
    if (*train) cmd_train(ctx, data);
    if (*pipe) cmd_pipeline(ctx);
    if (*pseudo) cmd_pseudolabel(ctx, checkpoint, images);
    if (*evaluate) cmd_evaluate(ctx, checkpoint, data, full_frame);
    if (*ensemble) cmd_ensemble(ctx, members, mode, data);
    if (*fid) cmd_fid(ctx, fid_a, fid_b, extractor);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::config);
  } catch (const cv::Exception& e) {
    err << "error: image processing failed: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::runtime);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::runtime);
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"retseg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace retseg::cli

#include <fstream>

#include "retseg/cli.hpp"
#include "retseg/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace retseg::cli {
namespace {

// Keys accepted in a section are exactly those its serializer emits.
void reject_unknown(const json& j, const json& reference, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
}

template <typename T, typename Parse>
T section(const json& j, const char* name, const json& reference, Parse parse) {
  if (!j.contains(name)) return parse(json::object());
  reject_unknown(j.at(name), reference, name);
  return parse(j.at(name));
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  pipeline.validate();
  if (ensemble) {
    if (ensemble->members.size() < 2) throw ConfigError("ensemble.members needs at least two checkpoints");
    if (!(ensemble->threshold > 0.0 && ensemble->threshold < 1.0)) {
      throw ConfigError("ensemble.threshold must be in (0,1)");
    }
  }
  if (out.empty()) throw ConfigError("out must not be empty");
}

void RunConfig::validate_paths() const {
  if (!data.drive_root.empty() && !fs::is_directory(data.drive_root)) {
    throw ConfigError("data.drive_root: dataset root does not exist: " + data.drive_root);
  }
  if (pipeline.generator_source == pipeline::GeneratorSource::external_dir && !fs::is_directory(pipeline.synthetic_dir)) {
    throw ConfigError("pipeline.synthetic_dir does not exist: " + pipeline.synthetic_dir);
  }
  if (ensemble) {
    for (const auto& m : ensemble->members) {
      if (!fs::is_regular_file(m)) throw ConfigError("ensemble.members: checkpoint not found: " + m);
    }
  }
}

json to_json(const RunConfig& c) {
  json j{{"data", pipeline::to_json(c.data)},
         {"model", model::to_json(c.model)},
         {"train", training::to_json(c.train)},
         {"pipeline", pipeline::to_json(c.pipeline)},
         {"out", c.out},
         {"seed", c.seed}};
  if (c.ensemble) j["ensemble"] = pipeline::to_json(*c.ensemble);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  const RunConfig defaults;
  json reference = to_json(defaults);
  reference["ensemble"] = pipeline::to_json(pipeline::EnsembleSpec{});
  reject_unknown(j, reference, "config");
  RunConfig c;
  try {
    c.data = section<pipeline::DataConfig>(j, "data", reference["data"], pipeline::data_config_from_json);
    c.model = section<model::SAUNetConfig>(j, "model", reference["model"], model::saunet_config_from_json);
    c.train = section<training::TrainConfig>(j, "train", reference["train"], training::train_config_from_json);
    c.pipeline =
        section<pipeline::PipelineConfig>(j, "pipeline", reference["pipeline"], pipeline::pipeline_config_from_json);
    if (j.contains("ensemble") && !j.at("ensemble").is_null()) {
      c.ensemble = section<pipeline::EnsembleSpec>(j, "ensemble", reference["ensemble"],
                                                   pipeline::ensemble_spec_from_json);
    }
    c.out = j.value("out", c.out);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace retseg::cli

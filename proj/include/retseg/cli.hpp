#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "retseg/pipeline.hpp"

namespace retseg::cli {

// Everything a command needs, read from one JSON file:
//   {"data": {...}, "model": {...}, "train": {...}, "pipeline": {...},
//    "ensemble": {...} (optional), "out": "...", "seed": 0}
// Missing sections take their defaults; unknown keys are rejected.
struct RunConfig {
  pipeline::DataConfig data;
  model::SAUNetConfig model;
  training::TrainConfig train;
  pipeline::PipelineConfig pipeline;
  std::optional<pipeline::EnsembleSpec> ensemble;
  std::string out = "retseg_out";
  std::uint64_t seed = 0;

  void validate() const;        // field ranges
  void validate_paths() const;  // referenced files and directories exist
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& file);

// Entry point of the `retseg` binary. Reports go to `out`, diagnostics to
// `err`. Returns the process exit code: 0 success, 2 configuration error,
// 3 data error, 4 runtime error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace retseg::cli

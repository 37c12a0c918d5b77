#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "retseg/layers.hpp"

namespace retseg::model {

struct SAUNetConfig {
  int in_channels = 3;
  int base_width = 16;  // channels of the first stage, doubled per downsampling
  int depth = 3;        // number of 2x downsamplings
  int dropblock_size = 7;
  double dropblock_keep_prob = 0.9;
  int attention_kernel = 7;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;

  void validate() const;  // throws ConfigError
  friend bool operator==(const SAUNetConfig&, const SAUNetConfig&) = default;
};

nlohmann::json to_json(const SAUNetConfig& c);
SAUNetConfig saunet_config_from_json(const nlohmann::json& j);

// U-shaped encoder/decoder. Encoder stage i runs two ConvBlocks at
// base_width * 2^i channels and is followed by a 2x max-pool. The bottleneck
// is ConvBlock -> SpatialAttention -> ConvBlock at base_width * 2^depth.
// Each decoder stage upsamples with a 2x2 transposed convolution,
// concatenates the matching encoder output and runs two ConvBlocks. A 1x1
// convolution and a sigmoid produce the vessel probability map.
class SAUNet {
 public:
  explicit SAUNet(const SAUNetConfig& config, std::uint64_t init_seed = 0);

  const SAUNetConfig& config() const { return config_; }

  // N x C x S x S -> N x 1 x S x S probabilities. Records activations for
  // backward(). In training mode DropBlock is active (seeded by
  // dropblock_seed) and batch norm uses batch statistics.
  Tensor forward(const Tensor& batch, bool training, std::uint64_t dropblock_seed = 0);
  // Same as forward() but with batch norm pinned to running statistics and
  // DropBlock off; backward() is valid afterwards.
  Tensor forward_eval_recording(const Tensor& batch);
  // Evaluation-mode forward without recording; safe to call concurrently.
  Tensor predict(const Tensor& batch) const;

  // Gradient of the loss w.r.t. the output probabilities -> accumulates
  // parameter gradients, returns gradient w.r.t. the input batch.
  Tensor backward(const Tensor& grad_prob);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Buffer> buffers();
  void zero_grad();
  std::size_t parameter_count() const;
  // Fingerprint of every parameter and buffer value.
  std::uint64_t fingerprint() const;

  void check_input(const Tensor& batch) const;  // throws ShapeError

 private:
  struct EncoderStage {
    ConvBlock first, second;
    MaxPool2x2 pool;
  };
  struct DecoderStage {
    ConvTranspose2x2 up;
    ConvBlock first, second;
    int skip_channels = 0;
  };

  Tensor run(const Tensor& batch, Mode mode, std::uint64_t seed);

  SAUNetConfig config_;
  std::vector<EncoderStage> encoder_;
  ConvBlock bottleneck_in_;
  SpatialAttention attention_;
  ConvBlock bottleneck_out_;
  std::vector<DecoderStage> decoder_;  // deepest first
  Conv2d head_;
  Tensor output_;
};

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t rng_seed = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

// Binary parameter file at `path` plus a JSON sidecar at path + ".json"
// holding {config, epoch, rng_seed, metrics, fingerprint}.
void save_checkpoint(const SAUNet& net, const std::filesystem::path& path, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  SAUNet net;
  CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
// Loads parameters into an existing network; CheckpointError when the
// stored config differs from net.config().
CheckpointMeta load_checkpoint_into(SAUNet& net, const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace retseg::model

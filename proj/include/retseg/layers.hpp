#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retseg/rng.hpp"
#include "retseg/tensor.hpp"

namespace retseg::model {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Non-trainable state that still belongs in a checkpoint.
struct Buffer {
  std::string name;
  Tensor* value;
};

enum class Mode { train, eval };

// Each layer exposes
//   infer(x) const      evaluation path, no state touched
//   forward(x, ...)     records what backward() needs
//   backward(dy)        returns dL/dx and accumulates parameter gradients
// backward() must follow the matching forward().

// Square kernel, stride 1, zero "same" padding.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, const std::string& name);

  void init(Rng& rng);
  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }

  Parameter weight;  // [out, in, k, k]
  Parameter bias;    // [1, out, 1, 1]

 private:
  int in_ = 0, out_ = 0, k_ = 1;
  Tensor input_;
};

// 2x2 kernel, stride 2: doubles H and W.
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(int in_channels, int out_channels, const std::string& name);

  void init(Rng& rng);
  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;  // [out, 2, 2, in]: row (o*4 + dy*2 + dx), column i
  Parameter bias;    // [1, out, 1, 1]

 private:
  int in_ = 0, out_ = 0;
  Tensor input_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(int channels, double momentum, double epsilon, const std::string& name);

  Tensor infer(const Tensor& x) const;
  // Train mode normalizes with batch statistics and updates the running
  // averages; eval mode uses the running averages.
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<Buffer>& out);

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  std::string name_;
  double momentum_ = 0.99;
  double epsilon_ = 1e-3;
  Mode mode_ = Mode::eval;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

class ReLU {
 public:
  static Tensor infer(const Tensor& x);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;

 private:
  Tensor output_;
};

class MaxPool2x2 {
 public:
  static Tensor infer(const Tensor& x);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;

 private:
  Tensor::Shape input_shape_{};
  std::vector<std::size_t> argmax_;
};

struct DropBlockState {
  double keep_prob = 0.9;
  int block_size = 7;
  std::uint64_t rng_seed = 0;
};

// Result of a stochastic DropBlock pass: keep[i] is 0 where dropped.
struct DropBlockMask {
  std::vector<std::uint8_t> keep;
  double scale = 1.0;  // total / kept over the whole tensor
};

// Samples the block mask for a tensor of the given shape. Seeds are drawn
// on the valid-centre region with rate
//   gamma = (1 - keep_prob) / block^2 * (H*W) / ((H - block + 1) * (W - block + 1))
// and each seed zeroes the block x block square centred on it.
DropBlockMask sample_dropblock_mask(const Tensor::Shape& shape, const DropBlockState& state);

// Identity unless training with keep_prob < 1.
Tensor dropblock(const Tensor& features, const DropBlockState& state, bool training);

class DropBlock {
 public:
  DropBlock() = default;
  DropBlock(double keep_prob, int block_size) : keep_prob_(keep_prob), block_size_(block_size) {}

  Tensor forward(const Tensor& x, bool training, std::uint64_t seed);
  Tensor backward(const Tensor& grad_out) const;

  double keep_prob() const { return keep_prob_; }
  int block_size() const { return block_size_; }

 private:
  double keep_prob_ = 1.0;
  int block_size_ = 1;
  bool active_ = false;
  DropBlockMask mask_;
};

// Channel-wise mean and max maps -> k x k convolution -> sigmoid gate,
// multiplied into every channel.
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(int kernel, const std::string& name);

  void init(Rng& rng);
  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  // Gate of the last forward(), N x 1 x H x W.
  const Tensor& gate() const { return gate_; }
  Conv2d& conv() { return conv_; }
  const Conv2d& conv() const { return conv_; }

 private:
  Tensor pooled(const Tensor& x, std::vector<int>* argmax_channel) const;

  Conv2d conv_;
  Tensor input_;
  Tensor gate_;
  std::vector<int> argmax_channel_;
};

// Free-function form of the attention block with explicit gate parameters
// (weights 1 x 2 x k x k, scalar bias).
Tensor spatial_attention(const Tensor& features, int kernel, const Tensor& gate_weights, double gate_bias);

// Convolution -> DropBlock -> batch norm -> ReLU.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(int in_channels, int out_channels, double keep_prob, int block_size, double bn_momentum,
            double bn_epsilon, const std::string& name);

  void init(Rng& rng) { conv_.init(rng); }
  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x, Mode mode, std::uint64_t seed);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<Buffer>& out) { bn_.collect_buffers(out); }

 private:
  Conv2d conv_;
  DropBlock drop_;
  BatchNorm2d bn_;
  ReLU relu_;
};

}  // namespace retseg::model

#include "retseg/saunet.hpp"

#include <algorithm>
#include <cmath>

#include "retseg/errors.hpp"

using nlohmann::json;

namespace retseg::model {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Keeps probabilities strictly inside (0,1) even when the logit saturates.
constexpr double kProbFloor = 1e-12;

}  // namespace

void SAUNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
  if (base_width < 1) throw ConfigError("model.base_width must be >= 1");
  if (depth < 1) throw ConfigError("model.depth must be >= 1");
  if (dropblock_size < 1 || dropblock_size % 2 == 0) throw ConfigError("model.dropblock_size must be odd and >= 1");
  if (!(dropblock_keep_prob > 0.0 && dropblock_keep_prob <= 1.0)) {
    throw ConfigError("model.dropblock_keep_prob must be in (0,1]");
  }
  if (attention_kernel < 1 || attention_kernel % 2 == 0) throw ConfigError("model.attention_kernel must be odd");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("model.bn_momentum must be in [0,1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("model.bn_epsilon must be positive");
}

json to_json(const SAUNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_width", c.base_width},
          {"depth", c.depth},
          {"dropblock_size", c.dropblock_size},
          {"dropblock_keep_prob", c.dropblock_keep_prob},
          {"attention_kernel", c.attention_kernel},
          {"bn_momentum", c.bn_momentum},
          {"bn_epsilon", c.bn_epsilon}};
}

SAUNetConfig saunet_config_from_json(const json& j) {
  SAUNetConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.base_width = j.value("base_width", c.base_width);
  c.depth = j.value("depth", c.depth);
  c.dropblock_size = j.value("dropblock_size", c.dropblock_size);
  c.dropblock_keep_prob = j.value("dropblock_keep_prob", c.dropblock_keep_prob);
  c.attention_kernel = j.value("attention_kernel", c.attention_kernel);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
  c.validate();
  return c;
}

SAUNet::SAUNet(const SAUNetConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  auto block = [&](int in, int out, const std::string& name) {
    return ConvBlock(in, out, c.dropblock_keep_prob, c.dropblock_size, c.bn_momentum, c.bn_epsilon, name);
  };
  auto width = [&](int stage) { return c.base_width << stage; };

  int in = c.in_channels;
  for (int s = 0; s < c.depth; ++s) {
    const std::string name = "enc" + std::to_string(s);
    encoder_.push_back({block(in, width(s), name + ".block1"), block(width(s), width(s), name + ".block2"), {}});
    in = width(s);
  }
  bottleneck_in_ = block(in, width(c.depth), "bottleneck.block1");
  attention_ = SpatialAttention(c.attention_kernel, "attention");
  bottleneck_out_ = block(width(c.depth), width(c.depth), "bottleneck.block2");
  for (int s = c.depth - 1; s >= 0; --s) {
    const std::string name = "dec" + std::to_string(s);
    decoder_.push_back({ConvTranspose2x2(width(s + 1), width(s), name + ".up"),
                        block(2 * width(s), width(s), name + ".block1"), block(width(s), width(s), name + ".block2"),
                        width(s)});
  }
  head_ = Conv2d(width(0), 1, 1, "head");

  Rng rng(init_seed);
  for (auto& e : encoder_) {
    e.first.init(rng);
    e.second.init(rng);
  }
  bottleneck_in_.init(rng);
  attention_.init(rng);
  bottleneck_out_.init(rng);
  for (auto& d : decoder_) {
    d.up.init(rng);
    d.first.init(rng);
    d.second.init(rng);
  }
  head_.init(rng);
}

void SAUNet::check_input(const Tensor& batch) const {
  if (batch.empty()) throw ShapeError("empty input batch");
  if (batch.c() != config_.in_channels) {
    throw ShapeError("expected " + std::to_string(config_.in_channels) + " input channels, got " +
                     batch.shape_string());
  }
  const int factor = 1 << config_.depth;
  if (batch.h() % factor != 0 || batch.w() % factor != 0) {
    throw ShapeError("input " + batch.shape_string() + " is not divisible by 2^depth = " + std::to_string(factor));
  }
}

Tensor SAUNet::run(const Tensor& batch, Mode mode, std::uint64_t seed) {
  check_input(batch);
  std::uint64_t block_counter = 0;
  auto run_block = [&](ConvBlock& b, const Tensor& x) {
    return b.forward(x, mode, derive_seed(seed, "dropblock", block_counter++));
  };

  std::vector<Tensor> skips;
  Tensor h = batch;
  for (auto& e : encoder_) {
    h = run_block(e.first, h);
    h = run_block(e.second, h);
    skips.push_back(h);
    h = e.pool.forward(h);
  }
  h = run_block(bottleneck_in_, h);
  h = attention_.forward(h);
  h = run_block(bottleneck_out_, h);
  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    auto& stage = decoder_[d];
    h = stage.up.forward(h);
    h = concat_channels(skips[skips.size() - 1 - d], h);
    h = run_block(stage.first, h);
    h = run_block(stage.second, h);
  }
  Tensor logits = head_.forward(h);
  output_ = Tensor(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    output_[i] = std::clamp(sigmoid(logits[i]), kProbFloor, 1.0 - kProbFloor);
  }
  return output_;
}

Tensor SAUNet::forward(const Tensor& batch, bool training, std::uint64_t dropblock_seed) {
  return run(batch, training ? Mode::train : Mode::eval, dropblock_seed);
}

Tensor SAUNet::forward_eval_recording(const Tensor& batch) { return run(batch, Mode::eval, 0); }

Tensor SAUNet::predict(const Tensor& batch) const {
  check_input(batch);
  std::vector<Tensor> skips;
  Tensor h = batch;
  for (const auto& e : encoder_) {
    h = e.second.infer(e.first.infer(h));
    skips.push_back(h);
    h = MaxPool2x2::infer(h);
  }
  h = bottleneck_out_.infer(attention_.infer(bottleneck_in_.infer(h)));
  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    const auto& stage = decoder_[d];
    h = concat_channels(skips[skips.size() - 1 - d], stage.up.infer(h));
    h = stage.second.infer(stage.first.infer(h));
  }
  Tensor out = head_.infer(h);
  for (double& v : out.values()) v = std::clamp(sigmoid(v), kProbFloor, 1.0 - kProbFloor);
  return out;
}

Tensor SAUNet::backward(const Tensor& grad_prob) {
  if (!grad_prob.same_shape(output_)) throw ShapeError("backward: gradient shape does not match last output");
  Tensor g(grad_prob.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_prob[i] * output_[i] * (1.0 - output_[i]);
  g = head_.backward(g);

  std::vector<Tensor> skip_grads(encoder_.size());
  // decoder_ is stored deepest first, so the gradient visits it in reverse.
  for (std::size_t d = decoder_.size(); d-- > 0;) {
    auto& stage = decoder_[d];
    g = stage.second.backward(g);
    g = stage.first.backward(g);
    Tensor skip_grad, up_grad;
    split_channels(g, stage.skip_channels, skip_grad, up_grad);
    skip_grads[encoder_.size() - 1 - d] = std::move(skip_grad);
    g = stage.up.backward(up_grad);
  }
  g = bottleneck_out_.backward(g);
  g = attention_.backward(g);
  g = bottleneck_in_.backward(g);
  for (std::size_t s = encoder_.size(); s-- > 0;) {
    auto& e = encoder_[s];
    g = e.pool.backward(g);
    g += skip_grads[s];
    g = e.second.backward(g);
    g = e.first.backward(g);
  }
  return g;
}

std::vector<Parameter*> SAUNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& e : encoder_) {
    e.first.collect(out);
    e.second.collect(out);
  }
  bottleneck_in_.collect(out);
  attention_.collect(out);
  bottleneck_out_.collect(out);
  for (auto& d : decoder_) {
    d.up.collect(out);
    d.first.collect(out);
    d.second.collect(out);
  }
  head_.collect(out);
  return out;
}

std::vector<const Parameter*> SAUNet::parameters() const {
  auto mutable_params = const_cast<SAUNet*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<Buffer> SAUNet::buffers() {
  std::vector<Buffer> out;
  for (auto& e : encoder_) {
    e.first.collect_buffers(out);
    e.second.collect_buffers(out);
  }
  bottleneck_in_.collect_buffers(out);
  bottleneck_out_.collect_buffers(out);
  for (auto& d : decoder_) {
    d.first.collect_buffers(out);
    d.second.collect_buffers(out);
  }
  return out;
}

void SAUNet::zero_grad() {
  for (Parameter* p : parameters()) p->grad.fill(0.0);
}

std::size_t SAUNet::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::uint64_t SAUNet::fingerprint() const {
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const Parameter* p : parameters()) h = fnv1a64(p->value.data(), p->value.size() * sizeof(double), h);
  for (const Buffer& b : const_cast<SAUNet*>(this)->buffers()) {
    h = fnv1a64(b.value->data(), b.value->size() * sizeof(double), h);
  }
  return h;
}

}  // namespace retseg::model

#include "retseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "retseg/errors.hpp"

namespace retseg::model {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

Parameter make_parameter(const std::string& name, Tensor::Shape shape) {
  return Parameter{name, Tensor(shape), Tensor(shape)};
}

void expect_grad_shape(const Tensor& grad, const Tensor::Shape& expected, const char* layer) {
  if (grad.shape() != expected) {
    throw ShapeError(std::string(layer) + " backward: gradient " + grad.shape_string() + " does not match its output");
  }
}

void he_normal(Tensor& t, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : t.values()) v = dist(rng);
}

void im2col(const double* x, int channels, int h, int w, int k, double* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const double* plane = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          double* row = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill_n(row, w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          for (int x0 = 0; x0 < w; ++x0) {
            const int sx = x0 + kx - pad;
            row[x0] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int h, int w, int k, double* x) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    double* plane = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* row = src + static_cast<std::size_t>(y) * w;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          for (int x0 = 0; x0 < w; ++x0) {
            const int sx = x0 + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += row[x0];
          }
        }
      }
    }
  }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, const std::string& name)
    : weight(make_parameter(name + ".weight", {out_channels, in_channels, kernel, kernel})),
      bias(make_parameter(name + ".bias", {1, out_channels, 1, 1})),
      in_(in_channels),
      out_(out_channels),
      k_(kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError(name + ": kernel must be odd and positive");
}

void Conv2d::init(Rng& rng) {
  he_normal(weight.value, in_ * k_ * k_, rng);
  bias.value.fill(0.0);
}

Tensor Conv2d::infer(const Tensor& x) const {
  if (x.c() != in_) {
    throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " + x.shape_string());
  }
  const int hw = x.h() * x.w();
  const int rows = in_ * k_ * k_;
  Tensor out(x.n(), out_, x.h(), x.w());
  ConstMatMap wm(weight.value.data(), out_, rows);
  ConstVecMap b(bias.value.data(), out_);
  std::vector<double> col(k_ == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
  for (int n = 0; n < x.n(); ++n) {
    const double* col_ptr = x.sample(n);
    if (k_ != 1) {
      im2col(x.sample(n), in_, x.h(), x.w(), k_, col.data());
      col_ptr = col.data();
    }
    MatMap o(out.sample(n), out_, hw);
    o.noalias() = wm * ConstMatMap(col_ptr, rows, hw);
    o.colwise() += b;
  }
  return out;
}

Tensor Conv2d::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  expect_grad_shape(grad_out, {x.n(), out_, x.h(), x.w()}, "conv");
  const int hw = x.h() * x.w();
  const int rows = in_ * k_ * k_;
  Tensor grad_in(x.shape());
  ConstMatMap wm(weight.value.data(), out_, rows);
  MatMap dw(weight.grad.data(), out_, rows);
  VecMap db(bias.grad.data(), out_);
  std::vector<double> col(k_ == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
  std::vector<double> dcol(k_ == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
  for (int n = 0; n < x.n(); ++n) {
    ConstMatMap dout(grad_out.sample(n), out_, hw);
    // Plain loop: Eigen's vectorized reductions peel by address, which makes
    // the rounding depend on where the buffer happens to be allocated.
    for (int o = 0; o < out_; ++o) {
      const double* row = grad_out.plane(n, o);
      double sum = 0.0;
      for (int i = 0; i < hw; ++i) sum += row[i];
      db[o] += sum;
    }
    if (k_ == 1) {
      dw.noalias() += dout * ConstMatMap(x.sample(n), rows, hw).transpose();
      MatMap(grad_in.sample(n), rows, hw).noalias() = wm.transpose() * dout;
      continue;
    }
    im2col(x.sample(n), in_, x.h(), x.w(), k_, col.data());
    dw.noalias() += dout * ConstMatMap(col.data(), rows, hw).transpose();
    MatMap(dcol.data(), rows, hw).noalias() = wm.transpose() * dout;
    col2im(dcol.data(), in_, x.h(), x.w(), k_, grad_in.sample(n));
  }
  return grad_in;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ------------------------------------------------------ ConvTranspose2x2

ConvTranspose2x2::ConvTranspose2x2(int in_channels, int out_channels, const std::string& name)
    : weight(make_parameter(name + ".weight", {out_channels, 2, 2, in_channels})),
      bias(make_parameter(name + ".bias", {1, out_channels, 1, 1})),
      in_(in_channels),
      out_(out_channels) {}

void ConvTranspose2x2::init(Rng& rng) {
  he_normal(weight.value, in_, rng);
  bias.value.fill(0.0);
}

Tensor ConvTranspose2x2::infer(const Tensor& x) const {
  if (x.c() != in_) throw ShapeError(weight.name + ": channel mismatch, got " + x.shape_string());
  const int h = x.h(), w = x.w(), hw = h * w;
  Tensor out(x.n(), out_, 2 * h, 2 * w);
  ConstMatMap wm(weight.value.data(), out_ * 4, in_);
  RowMat cols(out_ * 4, hw);
  for (int n = 0; n < x.n(); ++n) {
    cols.noalias() = wm * ConstMatMap(x.sample(n), in_, hw);
    for (int o = 0; o < out_; ++o) {
      const double b = bias.value[o];
      double* plane = out.plane(n, o);
      for (int d = 0; d < 4; ++d) {
        const int dy = d / 2, dx = d % 2;
        const double* src = cols.data() + static_cast<std::size_t>(o * 4 + d) * hw;
        for (int y = 0; y < h; ++y) {
          double* dst = plane + static_cast<std::size_t>(2 * y + dy) * (2 * w) + dx;
          for (int x0 = 0; x0 < w; ++x0) dst[2 * x0] = src[y * w + x0] + b;
        }
      }
    }
  }
  return out;
}

Tensor ConvTranspose2x2::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor ConvTranspose2x2::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  expect_grad_shape(grad_out, {x.n(), out_, 2 * x.h(), 2 * x.w()}, "transposed conv");
  const int h = x.h(), w = x.w(), hw = h * w;
  Tensor grad_in(x.shape());
  ConstMatMap wm(weight.value.data(), out_ * 4, in_);
  MatMap dw(weight.grad.data(), out_ * 4, in_);
  RowMat dcols(out_ * 4, hw);
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < out_; ++o) {
      const double* plane = grad_out.plane(n, o);
      double bsum = 0.0;
      for (int d = 0; d < 4; ++d) {
        const int dy = d / 2, dx = d % 2;
        double* dst = dcols.data() + static_cast<std::size_t>(o * 4 + d) * hw;
        for (int y = 0; y < h; ++y) {
          const double* src = plane + static_cast<std::size_t>(2 * y + dy) * (2 * w) + dx;
          for (int x0 = 0; x0 < w; ++x0) {
            dst[y * w + x0] = src[2 * x0];
            bsum += src[2 * x0];
          }
        }
      }
      bias.grad[o] += bsum;
    }
    ConstMatMap xin(x.sample(n), in_, hw);
    dw.noalias() += dcols * xin.transpose();
    MatMap(grad_in.sample(n), in_, hw).noalias() = wm.transpose() * dcols;
  }
  return grad_in;
}

void ConvTranspose2x2::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double momentum, double epsilon, const std::string& name)
    : gamma(make_parameter(name + ".gamma", {1, channels, 1, 1})),
      beta(make_parameter(name + ".beta", {1, channels, 1, 1})),
      running_mean(1, channels, 1, 1, 0.0),
      running_var(1, channels, 1, 1, 1.0),
      name_(name),
      momentum_(momentum),
      epsilon_(epsilon) {
  gamma.value.fill(1.0);
}

Tensor BatchNorm2d::infer(const Tensor& x) const {
  Tensor out(x.shape());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int c = 0; c < x.c(); ++c) {
    const double inv = 1.0 / std::sqrt(running_var[c] + epsilon_);
    const double a = gamma.value[c] * inv;
    const double b = beta.value[c] - running_mean[c] * a;
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = a * src[i] + b;
    }
  }
  return out;
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  mode_ = mode;
  const int channels = x.c();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  const double count = static_cast<double>(hw) * x.n();
  normalized_ = Tensor(x.shape());
  inv_std_.assign(channels, 0.0);
  Tensor out(x.shape());
  for (int c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* src = x.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) sum += src[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* src = x.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) sq += (src[i] - mean) * (src[i] - mean);
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean[c] = momentum_ * running_mean[c] + (1.0 - momentum_) * mean;
      running_var[c] = momentum_ * running_var[c] + (1.0 - momentum_) * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + epsilon_);
    inv_std_[c] = inv;
    const double g = gamma.value[c], b = beta.value[c];
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.plane(n, c);
      double* xh = normalized_.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (src[i] - mean) * inv;
        dst[i] = g * xh[i] + b;
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const Tensor& xh = normalized_;
  expect_grad_shape(grad_out, xh.shape(), "batch norm");
  Tensor grad_in(xh.shape());
  const std::size_t hw = static_cast<std::size_t>(xh.h()) * xh.w();
  const double count = static_cast<double>(hw) * xh.n();
  for (int c = 0; c < xh.c(); ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int n = 0; n < xh.n(); ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* x = xh.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * x[i];
      }
    }
    gamma.grad[c] += sum_dy_xh;
    beta.grad[c] += sum_dy;
    const double g = gamma.value[c], inv = inv_std_[c];
    for (int n = 0; n < xh.n(); ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* x = xh.plane(n, c);
      double* dx = grad_in.plane(n, c);
      if (mode_ == Mode::train) {
        const double k = g * inv / count;
        for (std::size_t i = 0; i < hw; ++i) dx[i] = k * (count * dy[i] - sum_dy - x[i] * sum_dy_xh);
      } else {
        for (std::size_t i = 0; i < hw; ++i) dx[i] = g * inv * dy[i];
      }
    }
  }
  return grad_in;
}

void BatchNorm2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm2d::collect_buffers(std::vector<Buffer>& out) {
  out.push_back({name_ + ".running_mean", &running_mean});
  out.push_back({name_ + ".running_var", &running_var});
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::infer(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor ReLU::forward(const Tensor& x) {
  output_ = infer(x);
  return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) const {
  expect_grad_shape(grad_out, output_.shape(), "relu");
  Tensor grad_in(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[i] = output_[i] > 0.0 ? grad_out[i] : 0.0;
  return grad_in;
}

// ------------------------------------------------------------ MaxPool2x2

Tensor MaxPool2x2::infer(const Tensor& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) throw ShapeError("max pool needs even spatial size, got " + x.shape_string());
  Tensor out(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < out.h(); ++y) {
        for (int x0 = 0; x0 < out.w(); ++x0) {
          out.at(n, c, y, x0) = std::max({x.at(n, c, 2 * y, 2 * x0), x.at(n, c, 2 * y, 2 * x0 + 1),
                                          x.at(n, c, 2 * y + 1, 2 * x0), x.at(n, c, 2 * y + 1, 2 * x0 + 1)});
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2x2::forward(const Tensor& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) throw ShapeError("max pool needs even spatial size, got " + x.shape_string());
  input_shape_ = x.shape();
  Tensor out(x.n(), x.c(), x.h() / 2, x.w() / 2);
  argmax_.assign(out.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < out.h(); ++y) {
        for (int x0 = 0; x0 < out.w(); ++x0, ++o) {
          std::size_t best = x.index(n, c, 2 * y, 2 * x0);
          for (std::size_t cand : {x.index(n, c, 2 * y, 2 * x0 + 1), x.index(n, c, 2 * y + 1, 2 * x0),
                                   x.index(n, c, 2 * y + 1, 2 * x0 + 1)}) {
            if (x[cand] > x[best]) best = cand;
          }
          argmax_[o] = best;
          out[o] = x[best];
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2x2::backward(const Tensor& grad_out) const {
  const auto& in = input_shape_;
  expect_grad_shape(grad_out, {in[0], in[1], in[2] / 2, in[3] / 2}, "max pool");
  Tensor grad_in(input_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad_in[argmax_[o]] += grad_out[o];
  return grad_in;
}

// ------------------------------------------------------------- DropBlock

DropBlockMask sample_dropblock_mask(const Tensor::Shape& shape, const DropBlockState& state) {
  const int n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  const int block = state.block_size;
  if (block < 1 || block % 2 == 0) throw ConfigError("dropblock: block size must be odd and positive");
  if (block > std::min(h, w)) {
    throw ConfigError("dropblock: block size " + std::to_string(block) + " exceeds feature map " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  if (state.keep_prob <= 0.0 || state.keep_prob > 1.0) throw ConfigError("dropblock: keep_prob must be in (0,1]");

  const int valid_h = h - block + 1, valid_w = w - block + 1;
  const double gamma = (1.0 - state.keep_prob) / (block * block) * (static_cast<double>(h) * w) /
                       (static_cast<double>(valid_h) * valid_w);
  const int half = block / 2;

  DropBlockMask mask;
  mask.keep.assign(static_cast<std::size_t>(n) * c * h * w, 1);
  Rng rng(state.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int p = 0; p < n * c; ++p) {
    std::uint8_t* plane = mask.keep.data() + static_cast<std::size_t>(p) * h * w;
    for (int sy = half; sy < half + valid_h; ++sy) {
      for (int sx = half; sx < half + valid_w; ++sx) {
        if (unit(rng) >= gamma) continue;
        for (int y = sy - half; y <= sy + half; ++y) {
          std::fill_n(plane + static_cast<std::size_t>(y) * w + (sx - half), block, std::uint8_t{0});
        }
      }
    }
  }
  const auto kept = static_cast<double>(std::count(mask.keep.begin(), mask.keep.end(), std::uint8_t{1}));
  mask.scale = kept > 0 ? static_cast<double>(mask.keep.size()) / kept : 0.0;
  return mask;
}

Tensor dropblock(const Tensor& features, const DropBlockState& state, bool training) {
  if (!training || state.keep_prob >= 1.0) return features;
  const DropBlockMask mask = sample_dropblock_mask(features.shape(), state);
  Tensor out(features.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.keep[i] ? features[i] * mask.scale : 0.0;
  return out;
}

Tensor DropBlock::forward(const Tensor& x, bool training, std::uint64_t seed) {
  active_ = training && keep_prob_ < 1.0;
  if (!active_) return x;
  mask_ = sample_dropblock_mask(x.shape(), {keep_prob_, block_size_, seed});
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask_.keep[i] ? x[i] * mask_.scale : 0.0;
  return out;
}

Tensor DropBlock::backward(const Tensor& grad_out) const {
  if (!active_) return grad_out;
  Tensor grad_in(grad_out.shape());
  for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] = mask_.keep[i] ? grad_out[i] * mask_.scale : 0.0;
  return grad_in;
}

// ------------------------------------------------------ SpatialAttention

SpatialAttention::SpatialAttention(int kernel, const std::string& name) : conv_(2, 1, kernel, name + ".conv") {}

void SpatialAttention::init(Rng& rng) { conv_.init(rng); }

Tensor SpatialAttention::pooled(const Tensor& x, std::vector<int>* argmax_channel) const {
  if (x.empty()) throw ShapeError("spatial attention on empty features");
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  Tensor out(x.n(), 2, x.h(), x.w());
  if (argmax_channel) argmax_channel->assign(static_cast<std::size_t>(x.n()) * hw, 0);
  for (int n = 0; n < x.n(); ++n) {
    double* mean = out.plane(n, 0);
    double* max = out.plane(n, 1);
    std::copy_n(x.plane(n, 0), hw, max);
    std::copy_n(x.plane(n, 0), hw, mean);
    for (int c = 1; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        mean[i] += src[i];
        if (src[i] > max[i]) {
          max[i] = src[i];
          if (argmax_channel) (*argmax_channel)[n * hw + i] = c;
        }
      }
    }
    for (std::size_t i = 0; i < hw; ++i) mean[i] /= x.c();
  }
  return out;
}

Tensor SpatialAttention::infer(const Tensor& x) const {
  const Tensor logits = conv_.infer(pooled(x, nullptr));
  Tensor out(x.shape());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    const double* z = logits.plane(n, 0);
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * sigmoid(z[i]);
    }
  }
  return out;
}

Tensor SpatialAttention::forward(const Tensor& x) {
  input_ = x;
  const Tensor logits = conv_.forward(pooled(x, &argmax_channel_));
  gate_ = Tensor(logits.shape());
  for (std::size_t i = 0; i < gate_.size(); ++i) gate_[i] = sigmoid(logits[i]);
  Tensor out(x.shape());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    const double* g = gate_.plane(n, 0);
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * g[i];
    }
  }
  return out;
}

Tensor SpatialAttention::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  expect_grad_shape(grad_out, x.shape(), "spatial attention");
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  Tensor grad_in(x.shape());
  Tensor grad_logits(gate_.shape());
  for (int n = 0; n < x.n(); ++n) {
    const double* g = gate_.plane(n, 0);
    double* dz = grad_logits.plane(n, 0);
    for (int c = 0; c < x.c(); ++c) {
      const double* dy = grad_out.plane(n, c);
      const double* src = x.plane(n, c);
      double* dx = grad_in.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        dx[i] = dy[i] * g[i];
        dz[i] += dy[i] * src[i];
      }
    }
    for (std::size_t i = 0; i < hw; ++i) dz[i] *= g[i] * (1.0 - g[i]);
  }
  const Tensor grad_pooled = conv_.backward(grad_logits);
  for (int n = 0; n < x.n(); ++n) {
    const double* dmean = grad_pooled.plane(n, 0);
    const double* dmax = grad_pooled.plane(n, 1);
    for (int c = 0; c < x.c(); ++c) {
      double* dx = grad_in.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dx[i] += dmean[i] / x.c();
    }
    for (std::size_t i = 0; i < hw; ++i) grad_in.plane(n, argmax_channel_[n * hw + i])[i] += dmax[i];
  }
  return grad_in;
}

void SpatialAttention::collect(std::vector<Parameter*>& out) { conv_.collect(out); }

Tensor spatial_attention(const Tensor& features, int kernel, const Tensor& gate_weights, double gate_bias) {
  SpatialAttention block(kernel, "attention");
  if (!gate_weights.same_shape(block.conv().weight.value)) {
    throw ShapeError("spatial attention gate weights must be 1x2x" + std::to_string(kernel) + "x" +
                     std::to_string(kernel));
  }
  block.conv().weight.value = gate_weights;
  block.conv().bias.value[0] = gate_bias;
  return block.infer(features);
}

// ------------------------------------------------------------- ConvBlock

ConvBlock::ConvBlock(int in_channels, int out_channels, double keep_prob, int block_size, double bn_momentum,
                     double bn_epsilon, const std::string& name)
    : conv_(in_channels, out_channels, 3, name + ".conv"),
      drop_(keep_prob, block_size),
      bn_(out_channels, bn_momentum, bn_epsilon, name + ".bn") {}

Tensor ConvBlock::infer(const Tensor& x) const { return ReLU::infer(bn_.infer(conv_.infer(x))); }

Tensor ConvBlock::forward(const Tensor& x, Mode mode, std::uint64_t seed) {
  Tensor h = conv_.forward(x);
  h = drop_.forward(h, mode == Mode::train, seed);
  h = bn_.forward(h, mode);
  return relu_.forward(h);
}

Tensor ConvBlock::backward(const Tensor& grad_out) {
  Tensor g = relu_.backward(grad_out);
  g = bn_.backward(g);
  g = drop_.backward(g);
  return conv_.backward(g);
}

void ConvBlock::collect(std::vector<Parameter*>& out) {
  conv_.collect(out);
  bn_.collect(out);
}

}  // namespace retseg::model

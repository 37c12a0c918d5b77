#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace retseg {

// Dense NCHW tensor of doubles. Double precision keeps finite-difference
// gradient checks meaningful; the networks trained here are small.
class Tensor {
 public:
  using Shape = std::array<int, 4>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(int n, int c, int h, int w, double fill = 0.0) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_[0]; }
  int c() const noexcept { return shape_[1]; }
  int h() const noexcept { return shape_[2]; }
  int w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }
  double& at(int n, int c, int y, int x) noexcept { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const noexcept { return data_[index(n, c, y, x)]; }

  // Pointer to the H*W plane of (n, c).
  double* plane(int n, int c) noexcept { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const noexcept { return data_.data() + index(n, c, 0, 0); }
  // Pointer to the C*H*W block of sample n.
  double* sample(int n) noexcept { return data_.data() + index(n, 0, 0, 0); }
  const double* sample(int n) const noexcept { return data_.data() + index(n, 0, 0, 0); }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

// Channel concatenation of two tensors sharing N, H, W.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Inverse of concat_channels: splits off the first `channels_a` channels.
void split_channels(const Tensor& joined, int channels_a, Tensor& a, Tensor& b);

}  // namespace retseg

#include "retseg/tensor.hpp"

#include <algorithm>

#include "retseg/errors.hpp"

namespace retseg {

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  for (int d : shape_) {
    if (d < 0) throw ShapeError("negative tensor dimension in " + shape_string());
  }
  data_.assign(static_cast<std::size_t>(shape_[0]) * shape_[1] * shape_[2] * shape_[3], fill);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) {
    throw ShapeError("tensor add: " + shape_string() + " vs " + other.shape_string());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(shape_[0]) + "x" + std::to_string(shape_[1]) + "x" +
         std::to_string(shape_[2]) + "x" + std::to_string(shape_[3]) + "]";
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t sa = static_cast<std::size_t>(a.c()) * a.h() * a.w();
  const std::size_t sb = static_cast<std::size_t>(b.c()) * b.h() * b.w();
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.sample(n), sa, out.sample(n));
    std::copy_n(b.sample(n), sb, out.sample(n) + sa);
  }
  return out;
}

void split_channels(const Tensor& joined, int channels_a, Tensor& a, Tensor& b) {
  const int cb = joined.c() - channels_a;
  a = Tensor(joined.n(), channels_a, joined.h(), joined.w());
  b = Tensor(joined.n(), cb, joined.h(), joined.w());
  const std::size_t sa = static_cast<std::size_t>(channels_a) * joined.h() * joined.w();
  const std::size_t sb = static_cast<std::size_t>(cb) * joined.h() * joined.w();
  for (int n = 0; n < joined.n(); ++n) {
    std::copy_n(joined.sample(n), sa, a.sample(n));
    std::copy_n(joined.sample(n) + sa, sb, b.sample(n));
  }
}

}  // namespace retseg

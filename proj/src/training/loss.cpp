#include <algorithm>
#include <cmath>

#include "retseg/errors.hpp"
#include "retseg/training.hpp"

namespace retseg::training {

LossValue combined_loss_with_grad(const Tensor& pred, const Tensor& target, const LossWeights& w) {
  if (!pred.same_shape(target)) {
    throw ShapeError("loss: prediction " + pred.shape_string() + " vs target " + target.shape_string());
  }
  if (pred.empty()) throw ShapeError("loss: empty tensors");
  const std::size_t count = pred.size();
  const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;

  double intersection = 0.0, sum_p = 0.0, sum_g = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = std::clamp(pred[i], lo, hi);
    const double g = target[i];
    intersection += p * g;
    sum_p += p;
    sum_g += g;
    bce -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
  }
  bce /= static_cast<double>(count);
  const double denom = sum_p + sum_g + kDiceSmoothing;
  const double dice = (2.0 * intersection + kDiceSmoothing) / denom;

  LossValue out;
  out.dice_term = 1.0 - dice;
  out.bce_term = bce;
  out.total = w.dice * out.dice_term + w.bce * out.bce_term;
  out.grad = Tensor(pred.shape());
  for (std::size_t i = 0; i < count; ++i) {
    if (pred[i] < lo || pred[i] > hi) continue;
    const double p = pred[i];
    const double g = target[i];
    const double d_dice = (2.0 * g * denom - (2.0 * intersection + kDiceSmoothing)) / (denom * denom);
    const double d_bce = (-g / p + (1.0 - g) / (1.0 - p)) / static_cast<double>(count);
    out.grad[i] = -w.dice * d_dice + w.bce * d_bce;
  }
  return out;
}

double combined_loss(const Tensor& pred, const Tensor& target, const LossWeights& w) {
  return combined_loss_with_grad(pred, target, w).total;
}

}  // namespace retseg::training

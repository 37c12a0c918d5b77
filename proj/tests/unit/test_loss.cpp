#include <gtest/gtest.h>

#include <cmath>

#include "retseg/errors.hpp"
#include "retseg/training.hpp"
#include "support/fixtures.hpp"

using namespace retseg;
using namespace retseg::training;

namespace {

// Straight transcription of the loss for a flat list of values.
double scalar_loss(const std::vector<double>& p_raw, const std::vector<double>& g) {
  double inter = 0.0, sp = 0.0, sg = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double p = std::min(std::max(p_raw[i], 1e-7), 1.0 - 1e-7);
    inter += p * g[i];
    sp += p;
    sg += g[i];
    bce += -(g[i] * std::log(p) + (1 - g[i]) * std::log(1 - p));
  }
  bce /= static_cast<double>(g.size());
  return 0.5 * (1.0 - (2 * inter + 1e-6) / (sp + sg + 1e-6)) + 0.5 * bce;
}

Tensor binary_target(Tensor::Shape shape, std::uint64_t seed) {
  Tensor t = retseg::testing::random_tensor(shape, seed, 0.0, 1.0);
  for (double& v : t.values()) v = v < 0.3 ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(Loss, PerfectPredictionIsNearZero) {
  const Tensor g = binary_target({2, 1, 8, 8}, 1);
  EXPECT_NEAR(combined_loss(g, g), 0.0, 1e-5);
}

TEST(Loss, HalfAgainstAllOnes) {
  const Tensor p(1, 1, 2, 2, 0.5), g(1, 1, 2, 2, 1.0);
  const auto v = combined_loss_with_grad(p, g);
  const double dice = 1.0 - (4.0 + 1e-6) / (6.0 + 1e-6);
  EXPECT_NEAR(v.dice_term, dice, 1e-12);
  EXPECT_NEAR(v.bce_term, std::log(2.0), 1e-12);
  EXPECT_NEAR(v.total, 0.5 * dice + 0.5 * std::log(2.0), 1e-12);
  EXPECT_NEAR(v.total, 0.5 / 3.0 + 0.5 * std::log(2.0), 1e-6);
}

TEST(Loss, ZeroTargetMatchesScalarOracle) {
  const Tensor p(1, 1, 2, 2, 1e-7), g(1, 1, 2, 2, 0.0);
  const double oracle = scalar_loss(std::vector<double>(4, 1e-7), std::vector<double>(4, 0.0));
  EXPECT_NEAR(combined_loss(p, g), oracle, 1e-12);
  // Dice term is 1 - eps / (4e-7 + eps); the BCE term is negligible.
  EXPECT_NEAR(combined_loss(p, g), 0.5 * (1.0 - 1e-6 / (4e-7 + 1e-6)), 1e-6);
}

TEST(Loss, RandomInputsMatchScalarOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor p = retseg::testing::random_tensor({2, 1, 5, 5}, seed, 0.0, 1.0);
    const Tensor g = binary_target(p.shape(), seed + 100);
    const std::vector<double> pv(p.values().begin(), p.values().end()), gv(g.values().begin(), g.values().end());
    EXPECT_NEAR(combined_loss(p, g), scalar_loss(pv, gv), 1e-12);
  }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Tensor p = retseg::testing::random_tensor({2, 1, 4, 4}, 3, 0.05, 0.95);
  const Tensor g = binary_target(p.shape(), 4);
  const auto v = combined_loss_with_grad(p, g);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + 1e-6;
    const double up = combined_loss(p, g);
    p[i] = keep - 1e-6;
    const double down = combined_loss(p, g);
    p[i] = keep;
    EXPECT_NEAR(v.grad[i], (up - down) / 2e-6, 1e-6);
  }
}

TEST(Loss, PermutationInvariantOverBatch) {
  const Tensor p = retseg::testing::random_tensor({3, 1, 4, 4}, 5, 0.0, 1.0);
  const Tensor g = binary_target(p.shape(), 6);
  Tensor ps(p.shape()), gs(g.shape());
  const std::size_t plane = 16;
  const int order[3] = {2, 0, 1};
  for (int n = 0; n < 3; ++n) {
    std::copy_n(p.sample(order[n]), plane, ps.sample(n));
    std::copy_n(g.sample(order[n]), plane, gs.sample(n));
  }
  EXPECT_NEAR(combined_loss(p, g), combined_loss(ps, gs), 1e-12);
}

TEST(Loss, NonNegativeAndFinite) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor p = retseg::testing::random_tensor({1, 1, 3, 3}, seed, -0.5, 1.5);
    const Tensor g = binary_target(p.shape(), seed + 7);
    const double l = combined_loss(p, g);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
  }
}

TEST(Loss, ShapeMismatch) {
  EXPECT_THROW(combined_loss(Tensor(1, 1, 2, 2), Tensor(1, 1, 2, 3)), ShapeError);
}

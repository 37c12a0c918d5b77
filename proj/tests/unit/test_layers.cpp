#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "retseg/errors.hpp"
#include "retseg/layers.hpp"
#include "support/fixtures.hpp"

using namespace retseg;
using namespace retseg::model;
using retseg::testing::random_tensor;

namespace {

double weighted_sum(const Tensor& out, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

// Central-difference check of d(sum(out * R))/d(input) and d/d(params) for
// a layer driven through `run` (forward) and `back` (backward).
double max_rel_error(Tensor x, const std::function<Tensor(const Tensor&)>& run,
                     const std::function<Tensor(const Tensor&)>& back, const std::vector<Parameter*>& params) {
  const double h = 1e-5;
  const Tensor r = random_tensor(run(x).shape(), 99);
  for (auto* p : params) p->grad = Tensor(p->value.shape());
  run(x);
  const Tensor dx = back(r);
  double worst = 0.0;
  auto compare = [&](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = weighted_sum(run(x), r);
    x[i] = keep - h;
    const double down = weighted_sum(run(x), r);
    x[i] = keep;
    compare(dx[i], (up - down) / (2 * h));
  }
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = weighted_sum(run(x), r);
      p->value[i] = keep - h;
      const double down = weighted_sum(run(x), r);
      p->value[i] = keep;
      compare(p->grad[i], (up - down) / (2 * h));
    }
  }
  return worst;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST(LayerGradients, Conv3x3And1x1) {
  for (int k : {1, 3}) {
    Conv2d conv(3, 2, k, "c");
    Rng rng(1);
    conv.init(rng);
    conv.bias.value = random_tensor(conv.bias.value.shape(), 5);
    std::vector<Parameter*> params;
    conv.collect(params);
    const double err = max_rel_error(
        random_tensor({2, 3, 5, 4}, 2), [&](const Tensor& x) { return conv.forward(x); },
        [&](const Tensor& g) { return conv.backward(g); }, params);
    EXPECT_LT(err, 1e-6) << "kernel " << k;
  }
}

TEST(LayerGradients, TransposedConv) {
  ConvTranspose2x2 up(3, 2, "u");
  Rng rng(3);
  up.init(rng);
  std::vector<Parameter*> params;
  up.collect(params);
  const double err = max_rel_error(
      random_tensor({2, 3, 3, 2}, 4), [&](const Tensor& x) { return up.forward(x); },
      [&](const Tensor& g) { return up.backward(g); }, params);
  EXPECT_LT(err, 1e-6);
}

TEST(LayerGradients, BatchNormTrainMode) {
  BatchNorm2d bn(3, 0.99, 1e-3, "bn");
  bn.gamma.value = random_tensor(bn.gamma.value.shape(), 6, 0.5, 1.5);
  bn.beta.value = random_tensor(bn.beta.value.shape(), 7);
  std::vector<Parameter*> params;
  bn.collect(params);
  const double err = max_rel_error(
      random_tensor({3, 3, 3, 3}, 8), [&](const Tensor& x) { return bn.forward(x, Mode::train); },
      [&](const Tensor& g) { return bn.backward(g); }, params);
  EXPECT_LT(err, 1e-5);
}

TEST(LayerGradients, ReluAndMaxPool) {
  // Values kept away from 0 and from ties so both are differentiable.
  Tensor x = random_tensor({1, 2, 4, 4}, 9, 0.1, 1.0);
  for (std::size_t i = 0; i < x.size(); i += 3) x[i] = -x[i];
  ReLU relu;
  EXPECT_LT(max_rel_error(x, [&](const Tensor& t) { return relu.forward(t); },
                          [&](const Tensor& g) { return relu.backward(g); }, {}),
            1e-6);
  MaxPool2x2 pool;
  EXPECT_LT(max_rel_error(x, [&](const Tensor& t) { return pool.forward(t); },
                          [&](const Tensor& g) { return pool.backward(g); }, {}),
            1e-6);
}

TEST(LayerGradients, SpatialAttention) {
  SpatialAttention att(3, "sa");
  Rng rng(10);
  att.init(rng);
  std::vector<Parameter*> params;
  att.collect(params);
  const double err = max_rel_error(
      random_tensor({2, 3, 4, 4}, 11), [&](const Tensor& x) { return att.forward(x); },
      [&](const Tensor& g) { return att.backward(g); }, params);
  EXPECT_LT(err, 1e-5);
}

TEST(LayerGradients, MismatchedGradientRejected) {
  Conv2d conv(1, 1, 3, "c");
  conv.forward(Tensor(1, 1, 4, 4));
  EXPECT_THROW(conv.backward(Tensor(1, 1, 3, 3)), ShapeError);
}

TEST(SpatialAttention, MatchesNaiveComputation) {
  // 4 channels on a 5x5 map, 3x3 kernel, loops written out by hand.
  SpatialAttention att(3, "sa");
  auto& conv = att.conv();
  conv.weight.value = random_tensor(conv.weight.value.shape(), 12, -0.5, 0.5);
  conv.bias.value[0] = 0.1;
  const Tensor x = random_tensor({1, 4, 5, 5}, 13);
  const Tensor out = att.infer(x);
  for (int y = 0; y < 5; ++y) {
    for (int xx = 0; xx < 5; ++xx) {
      double z = 0.1;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int sy = y + ky - 1, sx = xx + kx - 1;
          if (sy < 0 || sy >= 5 || sx < 0 || sx >= 5) continue;
          double mean = 0.0, max = -1e300;
          for (int c = 0; c < 4; ++c) {
            mean += x.at(0, c, sy, sx) / 4.0;
            max = std::max(max, x.at(0, c, sy, sx));
          }
          z += conv.weight.value.at(0, 0, ky, kx) * mean + conv.weight.value.at(0, 1, ky, kx) * max;
        }
      }
      for (int c = 0; c < 4; ++c) {
        EXPECT_NEAR(out.at(0, c, y, xx), x.at(0, c, y, xx) * sigmoid(z), 1e-12);
      }
    }
  }
  EXPECT_EQ(att.forward(x), out);
}

TEST(SpatialAttention, GateIsSharedAcrossChannelsAndBounded) {
  SpatialAttention att(7, "sa");
  Rng rng(14);
  att.init(rng);
  const Tensor x = random_tensor({2, 6, 8, 8}, 15, 0.5, 2.0);
  const Tensor out = att.forward(x);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        const double g = att.gate().at(n, 0, y, xx);
        EXPECT_GT(g, 0.0);
        EXPECT_LT(g, 1.0);
        for (int c = 0; c < 6; ++c) EXPECT_NEAR(out.at(n, c, y, xx) / x.at(n, c, y, xx), g, 1e-12);
      }
}

TEST(SpatialAttention, SaturationAndZeroFeatures) {
  SpatialAttention att(3, "sa");
  att.conv().weight.value.fill(0.0);
  att.conv().bias.value[0] = 50.0;
  const Tensor x = random_tensor({1, 2, 4, 4}, 16);
  const Tensor open = att.infer(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(open[i], x[i], 1e-12);
  att.conv().bias.value[0] = -50.0;
  const Tensor closed = att.infer(x);
  for (double v : closed.values()) EXPECT_NEAR(v, 0.0, 1e-12);
  att.conv().bias.value[0] = 0.0;
  const Tensor zero_out = att.infer(Tensor(1, 2, 4, 4));
  for (double v : zero_out.values()) EXPECT_EQ(v, 0.0);
}

TEST(DropBlock, IdentityOutsideTrainingOrAtFullKeep) {
  const Tensor x = random_tensor({1, 2, 9, 9}, 17);
  EXPECT_EQ(dropblock(x, {0.5, 3, 1}, false), x);
  EXPECT_EQ(dropblock(x, {1.0, 3, 1}, true), x);
  DropBlock layer(0.7, 3);
  EXPECT_EQ(layer.forward(x, false, 4), x);
  EXPECT_EQ(layer.backward(x), x);
}

TEST(DropBlock, KeptFractionMatchesExactExpectation) {
  // A pixel survives iff none of the valid centres covering it fires, so its
  // keep probability is (1 - gamma)^(number of covering centres).
  const int h = 40, w = 40, block = 5;
  const double keep_prob = 0.85;
  const int valid = h - block + 1;
  const double gamma = (1.0 - keep_prob) / (block * block) * (h * w) / (valid * valid);
  auto covering = [&](int p, int side) {
    const int lo = std::max(block / 2, p - block / 2);
    const int hi = std::min(side - 1 - block / 2, p + block / 2);
    return std::max(0, hi - lo + 1);
  };
  double expected = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) expected += std::pow(1.0 - gamma, covering(y, h) * covering(x, w));
  expected /= h * w;

  // 256 planes; the standard error of the kept fraction is about 0.003.
  const auto mask = sample_dropblock_mask({16, 16, h, w}, {keep_prob, block, 21});
  const double kept = static_cast<double>(std::count(mask.keep.begin(), mask.keep.end(), 1)) /
                      static_cast<double>(mask.keep.size());
  EXPECT_NEAR(kept, expected, 0.012);
  EXPECT_NEAR(mask.scale, 1.0 / kept, 1e-9);
}

TEST(DropBlock, DroppedPixelsFormWholeBlocks) {
  const int h = 16, w = 12, block = 3;
  const auto mask = sample_dropblock_mask({2, 3, h, w}, {0.8, block, 5});
  for (int p = 0; p < 6; ++p) {
    const std::uint8_t* plane = mask.keep.data() + static_cast<std::size_t>(p) * h * w;
    auto square_dropped = [&](int cy, int cx) {
      for (int y = cy - 1; y <= cy + 1; ++y)
        for (int x = cx - 1; x <= cx + 1; ++x)
          if (plane[y * w + x]) return false;
      return true;
    };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (plane[y * w + x]) continue;
        bool covered = false;
        for (int cy = std::max(1, y - 1); cy <= std::min(h - 2, y + 1) && !covered; ++cy)
          for (int cx = std::max(1, x - 1); cx <= std::min(w - 2, x + 1) && !covered; ++cx)
            covered = square_dropped(cy, cx);
        ASSERT_TRUE(covered) << "plane " << p << " pixel " << x << "," << y;
      }
    }
  }
}

TEST(DropBlock, OutputScaledAndSeeded) {
  const Tensor x(1, 1, 20, 20, 1.0);
  const Tensor a = dropblock(x, {0.8, 3, 8}, true);
  double total = 0.0;
  for (double v : a.values()) total += v;
  EXPECT_NEAR(total, 400.0, 1e-9);
  EXPECT_EQ(dropblock(x, {0.8, 3, 8}, true), a);
  EXPECT_NE(dropblock(x, {0.8, 3, 9}, true), a);
}

TEST(DropBlock, InvalidSettings) {
  EXPECT_THROW(sample_dropblock_mask({1, 1, 4, 4}, {0.9, 5, 0}), ConfigError);
  EXPECT_THROW(sample_dropblock_mask({1, 1, 8, 8}, {0.9, 4, 0}), ConfigError);
  EXPECT_THROW(sample_dropblock_mask({1, 1, 8, 8}, {0.0, 3, 0}), ConfigError);
}

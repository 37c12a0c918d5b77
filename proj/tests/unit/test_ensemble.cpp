#include <gtest/gtest.h>

#include <memory>

#include "retseg/errors.hpp"
#include "retseg/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace retseg;
using namespace retseg::pipeline;
using retseg::testing::TempDir;

namespace {

Predictor constant(double v) {
  return [v](const Tensor& x) { return Tensor(x.n(), 1, x.h(), x.w(), v); };
}

// Deterministic per-pixel map derived from the input, scaled by `gain`.
Predictor wavy(double gain, double offset) {
  return [=](const Tensor& x) {
    Tensor out(x.n(), 1, x.h(), x.w());
    for (int n = 0; n < x.n(); ++n)
      for (int y = 0; y < x.h(); ++y)
        for (int c = 0; c < x.w(); ++c)
          out.at(n, 0, y, c) = std::clamp(offset + gain * x.at(n, 0, y, c), 0.0, 1.0);
    return out;
  };
}

model::SAUNetConfig tiny_net() {
  model::SAUNetConfig c;
  c.base_width = 2;
  c.depth = 1;
  c.dropblock_size = 3;
  c.attention_kernel = 3;
  return c;
}

}  // namespace

TEST(Ensemble, IdenticalCheckpointsReproduceSingleModel) {
  TempDir dir("ens");
  const model::SAUNet net(tiny_net(), 3);
  model::save_checkpoint(net, dir / "a.ckpt", {});
  const Tensor batch = retseg::testing::random_tensor({2, 3, 8, 8}, 4, 0.0, 1.0);
  const Tensor single = net.predict(batch);
  for (auto mode : {FusionMode::mean, FusionMode::max, FusionMode::min}) {
    const auto out = ensemble_predict({{(dir / "a.ckpt").string(), (dir / "a.ckpt").string()}, mode, 0.5}, batch);
    EXPECT_EQ(out.probabilities, single) << to_string(mode);
  }
}

TEST(Ensemble, ConstantMembers) {
  const Tensor batch(1, 3, 4, 4);
  const Ensemble mean({constant(0.2), constant(0.8)}, FusionMode::mean, 0.5);
  const auto m = mean.predict(batch);
  for (std::size_t i = 0; i < m.probabilities.size(); ++i) {
    EXPECT_NEAR(m.probabilities[i], 0.5, 1e-15);
    EXPECT_EQ(m.binary[i], m.probabilities[i] >= 0.5 ? 1.0 : 0.0);
  }
  const auto hi = Ensemble({constant(0.2), constant(0.8)}, FusionMode::max, 0.5).predict(batch);
  for (double v : hi.probabilities.values()) EXPECT_EQ(v, 0.8);
  const auto lo = Ensemble({constant(0.2), constant(0.8)}, FusionMode::min, 0.5).predict(batch);
  for (double v : lo.probabilities.values()) EXPECT_EQ(v, 0.2);
  const auto vote = Ensemble({constant(0.2), constant(0.8), constant(0.6)}, FusionMode::vote, 0.5).predict(batch);
  for (double v : vote.probabilities.values()) EXPECT_NEAR(v, 2.0 / 3.0, 1e-15);
  for (double v : vote.binary.values()) EXPECT_EQ(v, 1.0);
}

TEST(Ensemble, ExactHalfIsPositive) {
  const Ensemble e({constant(0.5), constant(0.5)}, FusionMode::mean, 0.5);
  const auto out = e.predict(Tensor(1, 3, 2, 2));
  for (double v : out.binary.values()) EXPECT_EQ(v, 1.0);
}

TEST(Ensemble, Errors) {
  EXPECT_THROW(Ensemble({constant(0.2)}, FusionMode::mean, 0.5), EnsembleError);
  EXPECT_THROW(Ensemble({constant(0.2), constant(0.3)}, FusionMode::mean, 1.0), ConfigError);
  const Predictor wrong = [](const Tensor& x) { return Tensor(x.n(), 1, x.h() / 2, x.w() / 2); };
  EXPECT_THROW(Ensemble({constant(0.2), wrong}, FusionMode::mean, 0.5).predict(Tensor(1, 3, 4, 4)), EnsembleError);
  EXPECT_THROW(fusion_mode_from_string("median"), ConfigError);
}

TEST(Ensemble, MeanIsMonotone) {
  const Tensor batch = retseg::testing::random_tensor({1, 3, 6, 6}, 5, 0.0, 1.0);
  const auto low = Ensemble({wavy(0.5, 0.1), wavy(-0.3, 0.6)}, FusionMode::mean, 0.5).predict(batch);
  const auto high = Ensemble({wavy(0.5, 0.2), wavy(-0.3, 0.65)}, FusionMode::mean, 0.5).predict(batch);
  for (std::size_t i = 0; i < low.probabilities.size(); ++i) EXPECT_GE(high.probabilities[i], low.probabilities[i]);
}

TEST(Ensemble, SensitivityOrderingMaxMeanMin) {
  const auto test = retseg::testing::toy_labeled(3, 8, 16);
  const std::vector<Predictor> members{wavy(0.9, 0.1), wavy(-0.6, 0.7), wavy(0.4, 0.3)};
  auto se = [&](FusionMode mode) { return evaluate_model(Ensemble(members, mode, 0.5).as_predictor(), test).se; };
  const double max_se = se(FusionMode::max), mean_se = se(FusionMode::mean), min_se = se(FusionMode::min);
  EXPECT_GE(max_se, mean_se);
  EXPECT_GE(mean_se, min_se);
  EXPECT_GT(max_se, min_se);
}

TEST(Ensemble, SpecJsonRoundTrip) {
  const EnsembleSpec spec{{"a.ckpt", "b.ckpt"}, FusionMode::vote, 0.4};
  const auto back = ensemble_spec_from_json(to_json(spec));
  EXPECT_EQ(back.members, spec.members);
  EXPECT_EQ(back.mode, FusionMode::vote);
  EXPECT_EQ(back.threshold, 0.4);
}

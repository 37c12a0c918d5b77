#include <algorithm>

#include "retseg/errors.hpp"
#include "retseg/pipeline.hpp"

using nlohmann::json;

namespace retseg::pipeline {

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::mean: return "mean";
    case FusionMode::max: return "max";
    case FusionMode::min: return "min";
    case FusionMode::vote: return "vote";
  }
  return "mean";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "mean") return FusionMode::mean;
  if (s == "max") return FusionMode::max;
  if (s == "min") return FusionMode::min;
  if (s == "vote") return FusionMode::vote;
  throw ConfigError("unknown ensemble mode '" + s + "'");
}

json to_json(const EnsembleSpec& s) {
  return {{"members", s.members}, {"mode", to_string(s.mode)}, {"threshold", s.threshold}};
}

EnsembleSpec ensemble_spec_from_json(const json& j) {
  EnsembleSpec s;
  s.members = j.value("members", std::vector<std::string>{});
  s.mode = fusion_mode_from_string(j.value("mode", std::string("mean")));
  s.threshold = j.value("threshold", s.threshold);
  return s;
}

Ensemble::Ensemble(std::vector<Predictor> members, FusionMode mode, double threshold)
    : members_(std::move(members)), mode_(mode), threshold_(threshold) {
  if (members_.size() < 2) throw EnsembleError("an ensemble needs at least two members");
  if (!(threshold_ > 0.0 && threshold_ < 1.0)) throw ConfigError("ensemble threshold must be in (0,1)");
}

Ensemble Ensemble::from_spec(const EnsembleSpec& spec) {
  if (spec.members.size() < 2) throw EnsembleError("an ensemble needs at least two members");
  std::vector<Predictor> members;
  for (const auto& path : spec.members) {
    auto loaded = model::load_checkpoint(path);
    members.push_back(make_predictor(std::make_shared<const model::SAUNet>(std::move(loaded.net))));
  }
  return Ensemble(std::move(members), spec.mode, spec.threshold);
}

EnsembleOutput Ensemble::predict(const Tensor& batch) const {
  std::vector<Tensor> outputs;
  outputs.reserve(members_.size());
  for (std::size_t k = 0; k < members_.size(); ++k) {
    outputs.push_back(members_[k](batch));
    if (outputs[k].c() != 1 || outputs[k].n() != batch.n() || outputs[k].h() != batch.h() ||
        outputs[k].w() != batch.w()) {
      throw EnsembleError("ensemble member " + std::to_string(k) + " produced " + outputs[k].shape_string() +
                          " for input " + batch.shape_string());
    }
  }
  EnsembleOutput out{Tensor(outputs.front().shape()), Tensor(outputs.front().shape())};
  const double members = static_cast<double>(outputs.size());
  for (std::size_t i = 0; i < out.probabilities.size(); ++i) {
    double v = 0.0;
    switch (mode_) {
      case FusionMode::mean:
        for (const auto& o : outputs) v += o[i];
        v /= members;
        break;
      case FusionMode::max:
        v = outputs.front()[i];
        for (const auto& o : outputs) v = std::max(v, o[i]);
        break;
      case FusionMode::min:
        v = outputs.front()[i];
        for (const auto& o : outputs) v = std::min(v, o[i]);
        break;
      case FusionMode::vote:
        for (const auto& o : outputs) v += o[i] >= threshold_ ? 1.0 : 0.0;
        v /= members;
        break;
    }
    out.probabilities[i] = v;
    out.binary[i] = v >= threshold_ ? 1.0 : 0.0;
  }
  return out;
}

Predictor Ensemble::as_predictor() const {
  return [self = *this](const Tensor& batch) { return self.predict(batch).probabilities; };
}

EnsembleOutput ensemble_predict(const EnsembleSpec& spec, const Tensor& batch) {
  return Ensemble::from_spec(spec).predict(batch);
}

}  // namespace retseg::pipeline

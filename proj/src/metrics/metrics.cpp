#include "retseg/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "retseg/errors.hpp"

namespace retseg::metrics {
namespace {

void require_binary_u8(const cv::Mat& m, const char* what) {
  if (m.type() != CV_8UC1) throw ValidationError(std::string(what) + " must be an 8-bit single-channel mask");
  cv::Mat bad = (m != 0) & (m != 1);
  if (cv::countNonZero(bad) != 0) throw ValidationError(std::string(what) + " contains values other than 0 and 1");
}

double ratio(std::uint64_t num, std::uint64_t den, const char* name, std::vector<std::string>& undefined) {
  if (den == 0) {
    undefined.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

struct ScoredPixel {
  double score;
  std::uint8_t positive;
};

double auc_of(std::vector<ScoredPixel>& pixels) {
  std::sort(pixels.begin(), pixels.end(),
            [](const ScoredPixel& a, const ScoredPixel& b) { return a.score < b.score; });
  std::int64_t positives = 0;
  // Twice the rank sum of the positives; midranks of tie groups stay integral.
  std::int64_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < pixels.size();) {
    std::size_t j = i;
    std::int64_t group_pos = 0;
    while (j < pixels.size() && pixels[j].score == pixels[i].score) {
      group_pos += pixels[j].positive;
      ++j;
    }
    // Ranks are i+1 .. j; doubled midrank is i+1+j.
    doubled_rank_sum += group_pos * static_cast<std::int64_t>(i + 1 + j);
    positives += group_pos;
    i = j;
  }
  const std::int64_t negatives = static_cast<std::int64_t>(pixels.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("AUC undefined: need both vessel and background pixels");
  }
  const std::int64_t doubled_u = doubled_rank_sum - positives * (positives + 1);
  return static_cast<double>(static_cast<long double>(doubled_u) /
                             (2.0L * static_cast<long double>(positives) * static_cast<long double>(negatives)));
}

}  // namespace

ConfusionCounts confusion(const cv::Mat& pred_binary, const cv::Mat& gt_binary, const cv::Mat& fov_mask) {
  if (pred_binary.size() != gt_binary.size() || pred_binary.size() != fov_mask.size()) {
    throw ValidationError("confusion: prediction, ground truth and FOV sizes differ");
  }
  require_binary_u8(pred_binary, "prediction");
  require_binary_u8(gt_binary, "ground truth");
  require_binary_u8(fov_mask, "fov mask");
  ConfusionCounts c;
  for (int y = 0; y < pred_binary.rows; ++y) {
    const auto* p = pred_binary.ptr<std::uint8_t>(y);
    const auto* g = gt_binary.ptr<std::uint8_t>(y);
    const auto* f = fov_mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < pred_binary.cols; ++x) {
      if (!f[x]) continue;
      if (p[x]) {
        (g[x] ? c.tp : c.fp) += 1;
      } else {
        (g[x] ? c.fn : c.tn) += 1;
      }
    }
  }
  return c;
}

MetricsReport scalar_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw EmptyFovError("no pixels inside the field of view");
  MetricsReport r;
  r.counts = c;
  r.se = ratio(c.tp, c.tp + c.fn, "se", r.undefined);
  r.sp = ratio(c.tn, c.tn + c.fp, "sp", r.undefined);
  r.acc = ratio(c.tp + c.tn, c.total(), "acc", r.undefined);
  r.precision = ratio(c.tp, c.tp + c.fp, "precision", r.undefined);
  r.f1 = (r.precision + r.se) > 0.0 ? 2.0 * (r.precision * r.se) / (r.precision + r.se) : 0.0;
  return r;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ValidationError("roc_auc: scores and labels differ in length");
  std::vector<ScoredPixel> pixels(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) pixels[i] = {scores[i], static_cast<std::uint8_t>(labels[i] != 0)};
  return auc_of(pixels);
}

double roc_auc(const cv::Mat& scores, const cv::Mat& gt_binary, const cv::Mat& fov_mask) {
  if (scores.type() != CV_64FC1) throw ValidationError("roc_auc: scores must be CV_64FC1");
  if (scores.size() != gt_binary.size() || scores.size() != fov_mask.size()) {
    throw ValidationError("roc_auc: score, ground truth and FOV sizes differ");
  }
  std::vector<ScoredPixel> pixels;
  for (int y = 0; y < scores.rows; ++y) {
    const double* s = scores.ptr<double>(y);
    const auto* g = gt_binary.ptr<std::uint8_t>(y);
    const auto* f = fov_mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < scores.cols; ++x) {
      if (f[x]) pixels.push_back({s[x], static_cast<std::uint8_t>(g[x] != 0)});
    }
  }
  return auc_of(pixels);
}

MetricsReport evaluate_predictions(std::span<const cv::Mat> probabilities, const dataset::DatasetManifest& test,
                                   const EvaluationOptions& options) {
  if (probabilities.size() != test.size()) {
    throw ValidationError("evaluate: " + std::to_string(probabilities.size()) + " predictions for " +
                          std::to_string(test.size()) + " samples");
  }
  ConfusionCounts pooled;
  std::vector<ScoredPixel> pixels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& sample = test.samples[i];
    if (!sample.labeled()) throw DataError("evaluate: sample '" + sample.id + "' has no vessel ground truth");
    const cv::Mat& prob = probabilities[i];
    if (prob.type() != CV_64FC1 || prob.size() != sample.vessel_mask->size()) {
      throw ValidationError("evaluate: prediction for '" + sample.id + "' has the wrong size or type");
    }
    const cv::Mat fov = options.fov_only ? sample.fov_mask : cv::Mat::ones(prob.size(), CV_8UC1);
    cv::Mat binary = prob >= options.threshold;
    binary /= 255;
    pooled += confusion(binary, *sample.vessel_mask, fov);
    for (int y = 0; y < prob.rows; ++y) {
      const double* s = prob.ptr<double>(y);
      const auto* g = sample.vessel_mask->ptr<std::uint8_t>(y);
      const auto* f = fov.ptr<std::uint8_t>(y);
      for (int x = 0; x < prob.cols; ++x) {
        if (f[x]) pixels.push_back({s[x], g[x]});
      }
    }
  }
  MetricsReport r = scalar_metrics(pooled);
  r.auc = auc_of(pixels);
  r.n_images = static_cast<int>(test.size());
  r.threshold = options.threshold;
  return r;
}

}  // namespace retseg::metrics

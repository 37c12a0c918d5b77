#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>

#include "json.hpp"
#include "retseg/dataset.hpp"

namespace retseg::metrics {

// Pixel counts inside the FOV; vessels are the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Inputs are CV_8UC1 {0,1} of equal size. Throws ValidationError on shape
// mismatch or non-binary values.
ConfusionCounts confusion(const cv::Mat& pred_binary, const cv::Mat& gt_binary, const cv::Mat& fov_mask);

struct MetricsReport {
  double se = 0.0;         // tp / (tp + fn)
  double sp = 0.0;         // tn / (tn + fp)
  double acc = 0.0;        // (tp + tn) / total
  double precision = 0.0;  // tp / (tp + fp)
  double f1 = 0.0;         // 2 * precision * se / (precision + se)
  double auc = 0.0;
  ConfusionCounts counts;
  int n_images = 0;
  double threshold = 0.5;
  // Ratios whose denominator was zero; they are reported as 0.
  std::vector<std::string> undefined;
};

// Throws EmptyFovError when the counts are all zero.
MetricsReport scalar_metrics(const ConfusionCounts& counts);

// Area under the ROC curve as the Mann-Whitney statistic: the probability
// that a random positive outscores a random negative, ties counting 1/2.
// Exact, O(n log n). Throws UndefinedMetricError without both classes.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
// Same, restricted to pixels with fov != 0. scores is CV_64FC1.
double roc_auc(const cv::Mat& scores, const cv::Mat& gt_binary, const cv::Mat& fov_mask);

struct EvaluationOptions {
  double threshold = 0.5;  // prediction is positive when prob >= threshold
  bool fov_only = true;    // false evaluates the full frame
};

// Micro-averaged evaluation: counts and AUC pooled over all pixels of all
// images. probabilities[i] is CV_64FC1 and matches test.samples[i].
MetricsReport evaluate_predictions(std::span<const cv::Mat> probabilities, const dataset::DatasetManifest& test,
                                   const EvaluationOptions& options = {});

// {method, se, sp, acc, auc, f1, precision, counts, n_images, threshold}
nlohmann::json to_json(const MetricsReport& r, const std::string& method);
MetricsReport report_from_json(const nlohmann::json& j);
std::string csv_header();
std::string csv_row(const MetricsReport& r, const std::string& method);

// --- Frechet distance between Gaussian fits in a feature space ---

struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // sample covariance, denominator n - 1
  std::size_t n = 0;
};

using FeatureExtractor = std::function<Eigen::VectorXd(const cv::Mat& rgb)>;

// Flattened side x side grayscale area-downsample.
FeatureExtractor raw_extractor(int side = 16);
void register_extractor(const std::string& name, FeatureExtractor extractor);
// "raw" is always available. Throws ConfigError for unknown names.
FeatureExtractor extractor_by_name(const std::string& name);

// Throws InsufficientSamplesError for fewer than two vectors.
FeatureStats feature_stats(const std::vector<Eigen::VectorXd>& features);
FeatureStats feature_stats(std::span<const cv::Mat> images, const FeatureExtractor& extractor);

// ||mu_a - mu_b||^2 + Tr(sigma_a + sigma_b - 2 (sigma_a sigma_b)^(1/2)).
// The square-root trace comes from the eigenvalues of
// sigma_a^(1/2) sigma_b sigma_a^(1/2). Throws ValidationError on dimension
// mismatch, NumericalError when a covariance is not symmetric PSD.
double fid(const FeatureStats& a, const FeatureStats& b);

}  // namespace retseg::metrics

#include <cmath>
#include <mutex>

#include <opencv2/imgproc.hpp>

#include "retseg/errors.hpp"
#include "retseg/metrics.hpp"

namespace retseg::metrics {
namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, FeatureExtractor>& registry() {
  static std::map<std::string, FeatureExtractor> r{{"raw", raw_extractor(16)}};
  return r;
}

// Eigenvalues below this (relative to the largest) count as numerical noise.
constexpr double kPsdTolerance = 1e-8;
constexpr double kEigenFloor = 1e-10;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* which) {
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (asym > kPsdTolerance * scale) throw NumericalError(std::string(which) + " covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError(std::string(which) + " covariance eigensolve failed");
  Eigen::VectorXd values = eig.eigenvalues();
  const double largest = std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() < -kPsdTolerance * largest) {
    throw NumericalError(std::string(which) + " covariance is not positive semi-definite");
  }
  values = values.unaryExpr([](double v) { return v < kEigenFloor ? 0.0 : std::sqrt(v); });
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FeatureExtractor raw_extractor(int side) {
  return [side](const cv::Mat& rgb) {
    cv::Mat gray;
    if (rgb.channels() == 3) {
      cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
    } else {
      gray = rgb;
    }
    cv::Mat small;
    cv::resize(gray, small, cv::Size(side, side), 0, 0, cv::INTER_AREA);
    cv::Mat as_double;
    small.convertTo(as_double, CV_64F);
    Eigen::VectorXd v(side * side);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) v[y * side + x] = as_double.at<double>(y, x);
    }
    return v;
  };
}

void register_extractor(const std::string& name, FeatureExtractor extractor) {
  std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(extractor);
}

FeatureExtractor extractor_by_name(const std::string& name) {
  std::lock_guard lock(registry_mutex());
  auto it = registry().find(name);
  if (it == registry().end()) throw ConfigError("unknown feature extractor '" + name + "'");
  return it->second;
}

FeatureStats feature_stats(const std::vector<Eigen::VectorXd>& features) {
  if (features.size() < 2) throw InsufficientSamplesError("feature statistics need at least 2 samples");
  const Eigen::Index dim = features.front().size();
  FeatureStats s;
  s.n = features.size();
  s.mu = Eigen::VectorXd::Zero(dim);
  for (const auto& f : features) {
    if (f.size() != dim) throw ValidationError("feature vectors differ in dimension");
    s.mu += f;
  }
  s.mu /= static_cast<double>(s.n);
  s.sigma = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& f : features) {
    const Eigen::VectorXd d = f - s.mu;
    s.sigma.noalias() += d * d.transpose();
  }
  s.sigma /= static_cast<double>(s.n - 1);
  return s;
}

FeatureStats feature_stats(std::span<const cv::Mat> images, const FeatureExtractor& extractor) {
  if (images.size() < 2) throw InsufficientSamplesError("feature statistics need at least 2 images");
  std::vector<Eigen::VectorXd> features;
  features.reserve(images.size());
  for (const auto& img : images) features.push_back(extractor(img));
  return feature_stats(features);
}

double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != a.mu.size() || b.sigma.rows() != b.mu.size() ||
      a.sigma.cols() != a.sigma.rows() || b.sigma.cols() != b.sigma.rows()) {
    throw ValidationError("fid: feature dimensions do not match");
  }
  const Eigen::MatrixXd sqrt_a = psd_sqrt(a.sigma, "first");
  psd_sqrt(b.sigma, "second");  // validation only
  const Eigen::MatrixXd inner = sqrt_a * b.sigma * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("fid: eigensolve failed");
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double v = eig.eigenvalues()[i];
    if (v >= kEigenFloor) trace_sqrt += std::sqrt(v);
  }
  const double mean_term = (a.mu - b.mu).squaredNorm();
  const double value = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt;
  return std::max(0.0, value);
}

}  // namespace retseg::metrics

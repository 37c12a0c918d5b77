#include <algorithm>

#include "retseg/batching.hpp"
#include "retseg/errors.hpp"
#include "retseg/parallel.hpp"
#include "retseg/pipeline.hpp"

namespace retseg::pipeline {

Predictor make_predictor(std::shared_ptr<const model::SAUNet> net) {
  return [net = std::move(net)](const Tensor& batch) { return net->predict(batch); };
}

std::vector<cv::Mat> predict_all(const Predictor& predictor, const dataset::DatasetManifest& manifest,
                                 int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  const std::span<const dataset::RetinalSample> all(manifest.samples);
  const std::size_t batches = (all.size() + batch_size - 1) / batch_size;
  std::vector<cv::Mat> out(all.size());
  parallel_for(batches, data_workers(), [&](std::size_t b) {
    const std::size_t start = b * batch_size;
    const std::size_t count = std::min<std::size_t>(batch_size, all.size() - start);
    const Tensor probs = predictor(image_tensor(all.subspan(start, count)));
    if (probs.n() != static_cast<int>(count) || probs.c() != 1 || probs.h() != all[start].height() ||
        probs.w() != all[start].width()) {
      throw ShapeError("predictor returned " + probs.shape_string() + " for a batch of " + std::to_string(count));
    }
    auto maps = probability_maps(probs);
    for (std::size_t i = 0; i < count; ++i) out[start + i] = std::move(maps[i]);
  });
  return out;
}

metrics::MetricsReport evaluate_model(const Predictor& predictor, const dataset::DatasetManifest& test,
                                      const metrics::EvaluationOptions& options, int batch_size) {
  for (const auto& s : test.samples) {
    if (!s.labeled()) throw DataError("evaluate: test sample '" + s.id + "' has no vessel ground truth");
  }
  const auto probs = predict_all(predictor, test, batch_size);
  return metrics::evaluate_predictions(probs, test, options);
}

}  // namespace retseg::pipeline

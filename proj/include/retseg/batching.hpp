#pragma once

#include <span>
#include <vector>

#include <opencv2/core.hpp>

#include "retseg/dataset.hpp"
#include "retseg/tensor.hpp"

namespace retseg {

// N x 3 x H x W from sample images (RGB planes). All samples must share a size.
Tensor image_tensor(std::span<const dataset::RetinalSample> samples);
// N x 1 x H x W {0,1} from vessel masks; DataError names an unlabeled sample.
Tensor mask_tensor(std::span<const dataset::RetinalSample> samples);
// Splits an N x 1 x H x W tensor into N CV_64FC1 maps.
std::vector<cv::Mat> probability_maps(const Tensor& probs);
// N CV_64FC1 maps of equal size -> N x 1 x H x W.
Tensor stack_maps(std::span<const cv::Mat> maps);

}  // namespace retseg

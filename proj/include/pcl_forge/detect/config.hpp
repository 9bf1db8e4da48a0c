#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/pcl/pairs.hpp"

namespace pclf::detect {

enum class NoiseView { srm, constrained };

inline std::string_view to_string(NoiseView v) { return v == NoiseView::srm ? "srm" : "constrained"; }

inline NoiseView noise_view_from_string(std::string_view s) {
  if (s == "srm") return NoiseView::srm;
  if (s == "constrained") return NoiseView::constrained;
  throw InvalidArgument("unknown noise view: " + std::string(s));
}

struct ModelConfig {
  int image_size = 64;
  NoiseView noise_view = NoiseView::srm;
  std::vector<int> backbone_channels{32, 64, 64, 64};
  int roi_dim = 256;
  int bilinear_dim = 32;
  int proj_hidden = 256;
  int proj_dim = 128;
  int constrained_kernels = 3;
  double srm_truncation = 2.0;
  std::vector<double> anchor_scales;  // empty -> default for image_size
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};

  int rpn_batch = 128;
  double rpn_positive_fraction = 0.5;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  int proposals_train = 32;
  int proposals_test = 100;
  double rpn_nms = 0.7;

  int rcnn_batch = 32;
  double rcnn_tampered_fraction = 0.25;
  double score_threshold = 0.05;
  double detection_nms = 0.5;

  std::uint64_t seed = 0;

  int stride() const { return 8; }
  int feature_channels() const { return backbone_channels.back(); }
  int feature_size() const { return (image_size + stride() - 1) / stride(); }
};

// Everything the loss composition needs beyond the network itself.
struct LossConfig {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double beta = 0.01;
  double omega = 1.0;  // weight of the unlabeled contrastive term for this step
  double tau = 0.1;
  double epsilon = 0.5;
  double delta = 0.5;
  pcl::Strategy strategy = pcl::Strategy::pcl;
  pcl::ScoreSource score_source = pcl::ScoreSource::rcnn;
  bool cross_image = false;
};

}  // namespace pclf::detect

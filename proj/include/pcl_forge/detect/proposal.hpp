#pragma once

#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/detect/nms.hpp"

namespace pclf::detect {

struct Proposal {
  Box box;
  double objectness = 0;   // RPN score
  double rcnn_score = 0;   // tampered probability from the fused head
  Deltas rcnn_deltas{0, 0, 0, 0};
  std::vector<double> h_rgb;
  std::vector<double> h_noise;
  int anchor_index = -1;   // -1 for boxes not produced by the RPN (e.g. ground truth)
};

struct Detection {
  Box box;
  double score = 0;
};

// Applies the localization deltas, clips, drops scores at or below the
// threshold, runs NMS and returns detections by descending score.
inline std::vector<Detection> decode_and_finalize(const std::vector<Proposal>& proposals, double image_w,
                                                  double image_h, double score_thresh = 0.05, double nms_iou = 0.5,
                                                  std::size_t max_detections = 100) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& p : proposals) {
    if (!(p.rcnn_score > score_thresh)) continue;
    const Box b = clip_box(decode_box(p.box, p.rcnn_deltas), image_w, image_h);
    if (!b.valid()) continue;
    boxes.push_back(b);
    scores.push_back(p.rcnn_score);
  }
  std::vector<Detection> out;
  for (int k : nms(boxes, scores, nms_iou, max_detections))
    out.push_back({boxes[static_cast<std::size_t>(k)], scores[static_cast<std::size_t>(k)]});
  return out;
}

}  // namespace pclf::detect

#pragma once

#include <algorithm>
#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/detect/anchors.hpp"

namespace pclf::detect {

enum class AnchorLabel { negative = 0, positive = 1, ignore = -1 };

struct AnchorMatch {
  AnchorLabel label = AnchorLabel::ignore;
  Deltas target{0, 0, 0, 0};  // only meaningful for positives
  int gt_index = -1;
  double max_iou = 0;
};

struct MatchThresholds {
  double positive = 0.7;
  double negative = 0.3;
};

// Positive when max IoU >= positive threshold or when the anchor attains the
// best IoU of some ground-truth box (ties included); negative when max IoU <=
// negative threshold; ignored otherwise.
inline std::vector<AnchorMatch> match_anchors(const std::vector<Anchor>& anchors, const std::vector<Box>& gt,
                                              MatchThresholds th = {}) {
  PCLF_REQUIRE(!gt.empty(), InvalidArgument, "match_anchors: labeled image without ground-truth boxes");
  const std::size_t na = anchors.size(), ng = gt.size();
  std::vector<double> iou(na * ng);
  std::vector<double> best_for_gt(ng, 0.0);
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t g = 0; g < ng; ++g) {
      iou[a * ng + g] = box_iou(anchors[a].box, gt[g]);
      best_for_gt[g] = std::max(best_for_gt[g], iou[a * ng + g]);
    }
  std::vector<AnchorMatch> out(na);
  for (std::size_t a = 0; a < na; ++a) {
    auto& m = out[a];
    for (std::size_t g = 0; g < ng; ++g)
      if (iou[a * ng + g] > m.max_iou || m.gt_index < 0) {
        m.max_iou = iou[a * ng + g];
        m.gt_index = static_cast<int>(g);
      }
    bool is_best = false;
    for (std::size_t g = 0; g < ng; ++g)
      if (best_for_gt[g] > 0 && iou[a * ng + g] == best_for_gt[g]) {
        is_best = true;
        // The gt this anchor is best for becomes its regression target when
        // it is not already above threshold for another gt.
        if (m.max_iou < th.positive) m.gt_index = static_cast<int>(g);
      }
    if (m.max_iou >= th.positive || is_best) {
      m.label = AnchorLabel::positive;
      m.target = encode_box(anchors[a].box, gt[static_cast<std::size_t>(m.gt_index)]);
    } else if (m.max_iou <= th.negative) {
      m.label = AnchorLabel::negative;
    }
  }
  return out;
}

}  // namespace pclf::detect

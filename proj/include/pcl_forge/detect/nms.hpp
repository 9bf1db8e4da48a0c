#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "pcl_forge/common/box.hpp"

namespace pclf::detect {

// Greedy NMS. Candidates are visited by descending score with ties broken by
// lower index; a box is suppressed when its IoU with a kept box exceeds
// `iou_threshold`. Returns kept indices in visiting order.
inline std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_threshold,
                            std::size_t max_keep = static_cast<std::size_t>(-1)) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  std::vector<int> keep;
  for (int idx : order) {
    if (keep.size() >= max_keep) break;
    bool suppressed = false;
    for (int k : keep)
      if (box_iou(boxes[static_cast<std::size_t>(idx)], boxes[static_cast<std::size_t>(k)]) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) keep.push_back(idx);
  }
  return keep;
}

}  // namespace pclf::detect

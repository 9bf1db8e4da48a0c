#pragma once

#include <cmath>
#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/error.hpp"

namespace pclf::detect {

struct Anchor {
  Box box;
  int scale_index = 0;
  int ratio_index = 0;
};

// Ratios are height / width; 0.5, 1, 2 correspond to 2:1, 1:1 and 1:2 (w:h).
inline const std::vector<double>& default_ratios() {
  static const std::vector<double> r{0.5, 1.0, 2.0};
  return r;
}

// Anchor side lengths; the 64-pixel scale only fits inputs of at least 128 px.
inline std::vector<double> default_scales(int image_size) {
  std::vector<double> s{8, 16, 32};
  if (image_size >= 128) s.push_back(64);
  return s;
}

// One anchor per (cell, scale, ratio), centred on the cell centre. Anchor k
// lives at cell k / (S*R) in row-major order, scale (k / R) % S, ratio k % R.
inline std::vector<Anchor> generate_anchors(int feat_h, int feat_w, int stride, const std::vector<double>& scales,
                                            const std::vector<double>& ratios) {
  PCLF_REQUIRE(!scales.empty() && !ratios.empty(), InvalidArgument, "generate_anchors: empty scales or ratios");
  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * scales.size() * ratios.size());
  for (int y = 0; y < feat_h; ++y)
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
      for (std::size_t s = 0; s < scales.size(); ++s)
        for (std::size_t r = 0; r < ratios.size(); ++r) {
          const double w = scales[s] / std::sqrt(ratios[r]);
          const double h = scales[s] * std::sqrt(ratios[r]);
          anchors.push_back({{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, static_cast<int>(s), static_cast<int>(r)});
        }
    }
  return anchors;
}

}  // namespace pclf::detect

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pcl_forge/common/box.hpp"

namespace pclf::detect {

inline constexpr int kRoiGrid = 4;

// Feature-cell extent of a box: [x0, x1) x [y0, y1), at least one cell wide.
struct CellRange {
  int x0, x1, y0, y1;
};

inline CellRange map_box_to_cells(const Box& box, int stride, int feat_h, int feat_w) {
  auto lo = [&](double v, int limit) { return std::clamp(static_cast<int>(std::floor(v / stride)), 0, limit); };
  auto hi = [&](double v, int limit) { return std::clamp(static_cast<int>(std::ceil(v / stride)), 0, limit); };
  CellRange r{lo(box.x1, feat_w), hi(box.x2, feat_w), lo(box.y1, feat_h), hi(box.y2, feat_h)};
  if (r.x1 <= r.x0) {
    r.x0 = std::min(r.x0, feat_w - 1);
    r.x1 = r.x0 + 1;
  }
  if (r.y1 <= r.y0) {
    r.y0 = std::min(r.y0, feat_h - 1);
    r.y1 = r.y0 + 1;
  }
  return r;
}

// Bin b of n over a span of `len` cells starting at `start`. Bins overlap when
// len < n, so a narrow box repeats its nearest cell instead of leaving a bin empty.
inline std::pair<int, int> bin_extent(int start, int len, int b, int n) {
  return {start + (b * len) / n, start + ((b + 1) * len + n - 1) / n};
}

// Max-pools one box of a [C, h, w] feature map onto a grid x grid lattice.
// Output layout is [C, grid, grid] flattened; `argmax` receives the flat
// plane offset of each winning cell for the backward pass.
template <typename T>
void roi_pool_forward(const T* feat, int channels, int feat_h, int feat_w, int stride, const Box& box, T* out,
                      int* argmax, int grid = kRoiGrid) {
  const CellRange r = map_box_to_cells(box, stride, feat_h, feat_w);
  const std::size_t plane = static_cast<std::size_t>(feat_h) * feat_w;
  for (int by = 0; by < grid; ++by) {
    const auto [y0, y1] = bin_extent(r.y0, r.y1 - r.y0, by, grid);
    for (int bx = 0; bx < grid; ++bx) {
      const auto [x0, x1] = bin_extent(r.x0, r.x1 - r.x0, bx, grid);
      for (int c = 0; c < channels; ++c) {
        const T* p = feat + c * plane;
        int best = y0 * feat_w + x0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            if (p[y * feat_w + x] > p[best]) best = y * feat_w + x;
        const std::size_t o = (static_cast<std::size_t>(c) * grid + by) * grid + bx;
        out[o] = p[best];
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void roi_pool_backward(const T* grad_out, const int* argmax, int channels, int feat_h, int feat_w, T* grad_feat,
                       int grid = kRoiGrid) {
  const std::size_t plane = static_cast<std::size_t>(feat_h) * feat_w;
  for (int c = 0; c < channels; ++c)
    for (int b = 0; b < grid * grid; ++b) {
      const std::size_t o = static_cast<std::size_t>(c) * grid * grid + b;
      grad_feat[c * plane + static_cast<std::size_t>(argmax[o])] += grad_out[o];
    }
}

}  // namespace pclf::detect

#pragma once

#include <cstdint>
#include <deque>
#include <utility>
#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/error.hpp"

namespace pclf::synth {

// H x W x 3 image, row-major HWC, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool same_size(const Image& o) const { return height == o.height && width == o.width; }
};

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int y, int x) const { return y >= 0 && x >= 0 && y < height && x < width; }

  std::size_t area() const {
    std::size_t n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
  }
  bool any() const { return area() > 0; }
  double area_fraction() const { return static_cast<double>(area()) / (static_cast<double>(height) * width); }

  Mask& operator|=(const Mask& o) {
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = (bits[i] || o.bits[i]) ? 1 : 0;
    return *this;
  }
};

// Chebyshev dilation by `radius` pixels.
inline Mask dilate(const Mask& m, int radius) {
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          if (out.contains(y + dy, x + dx)) out.at(y + dy, x + dx) = 1;
    }
  return out;
}

inline bool masks_intersect(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && b.bits[i]) return true;
  return false;
}

// Tight bounding box of all set pixels (exclusive max corner); invalid box when empty.
inline Box tight_bbox(const Mask& m) {
  int x1 = m.width, y1 = m.height, x2 = -1, y2 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
  if (x2 < 0) return {};
  return {double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
}

// 8-connected components, ordered by their first pixel in raster order.
inline std::vector<Mask> connected_components(const Mask& m) {
  std::vector<Mask> comps;
  std::vector<int> label(m.bits.size(), -1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x) || label[static_cast<std::size_t>(y) * m.width + x] >= 0) continue;
      Mask comp(m.height, m.width);
      const int id = static_cast<int>(comps.size());
      std::deque<std::pair<int, int>> queue{{y, x}};
      label[static_cast<std::size_t>(y) * m.width + x] = id;
      while (!queue.empty()) {
        auto [cy, cx] = queue.front();
        queue.pop_front();
        comp.at(cy, cx) = 1;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (!m.contains(ny, nx) || !m.at(ny, nx)) continue;
            auto& l = label[static_cast<std::size_t>(ny) * m.width + nx];
            if (l >= 0) continue;
            l = id;
            queue.emplace_back(ny, nx);
          }
      }
      comps.push_back(std::move(comp));
    }
  return comps;
}

inline std::vector<Box> component_boxes(const Mask& m) {
  std::vector<Box> boxes;
  for (const auto& c : connected_components(m)) boxes.push_back(tight_bbox(c));
  return boxes;
}

}  // namespace pclf::synth

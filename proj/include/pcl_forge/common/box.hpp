#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <vector>

namespace pclf {

// Axis-aligned box in pixel coordinates; origin top-left, x2/y2 exclusive.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return x1 + 0.5 * width(); }
  double cy() const { return y1 + 0.5 * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Box& b) {
  return os << "(" << b.x1 << "," << b.y1 << "," << b.x2 << "," << b.y2 << ")";
}

// Standard center/size regression parameterization (dx, dy, dw, dh).
using Deltas = std::array<double, 4>;

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

// IoU without diagnostics; degenerate boxes give 0.
inline double box_iou(const Box& a, const Box& b) {
  const double aa = a.area(), ab = b.area();
  if (aa <= 0 || ab <= 0) return 0.0;
  const double inter = intersection_area(a, b);
  return inter / (aa + ab - inter);
}

inline Deltas encode_box(const Box& anchor, const Box& target) {
  return {(target.cx() - anchor.cx()) / anchor.width(), (target.cy() - anchor.cy()) / anchor.height(),
          std::log(target.width() / anchor.width()), std::log(target.height() / anchor.height())};
}

// Inverse of encode_box. Size deltas are clamped so exp() stays bounded.
inline Box decode_box(const Box& anchor, const Deltas& d) {
  static const double kMaxLogScale = std::log(1000.0 / 16.0);
  const double dw = std::min(d[2], kMaxLogScale);
  const double dh = std::min(d[3], kMaxLogScale);
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(dw);
  const double h = anchor.height() * std::exp(dh);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
          std::clamp(b.y2, 0.0, height)};
}

inline Box flip_box_horizontal(const Box& b, double width) { return {width - b.x2, b.y1, width - b.x1, b.y2}; }

}  // namespace pclf

#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/metrics/metrics.hpp"

namespace pclf::plot {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{200, 200, 200};
inline constexpr std::array<Rgb, 4> kPalette{{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}}};

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h, kWhite) {}

  int width() const { return w_; }
  int height() const { return h_; }

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < w_ && y < h_) px_[static_cast<std::size_t>(y) * w_ + x] = c;
  }
  Rgb get(int x, int y) const { return px_[static_cast<std::size_t>(y) * w_ + x]; }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void dot(int x, int y, int r, Rgb c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (dx * dx + dy * dy <= r * r) set(x + dx, y + dy, c);
  }

  void write_png(const std::filesystem::path& path) const {
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(fp);
      throw IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w_) * 3);
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const Rgb c = get(x, y);
        std::copy(c.begin(), c.end(), row.begin() + static_cast<std::ptrdiff_t>(x) * 3);
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

// Maps data coordinates into a framed plot area with light grid lines.
class Axes {
 public:
  Axes(Canvas& c, double xmin, double xmax, double ymin, double ymax, int margin = 40)
      : c_(c), xmin_(xmin), xmax_(xmax), ymin_(ymin), ymax_(ymax), m_(margin) {
    if (!(xmax_ > xmin_)) xmax_ = xmin_ + 1;
    if (!(ymax_ > ymin_)) ymax_ = ymin_ + 1;
    for (int k = 1; k < 5; ++k) {
      const int gx = m_ + k * (c_.width() - 2 * m_) / 5, gy = m_ + k * (c_.height() - 2 * m_) / 5;
      c_.line(gx, m_, gx, c_.height() - m_, kGrey);
      c_.line(m_, gy, c_.width() - m_, gy, kGrey);
    }
    c_.line(m_, c_.height() - m_, c_.width() - m_, c_.height() - m_, kBlack);
    c_.line(m_, m_, m_, c_.height() - m_, kBlack);
  }

  int px(double x) const { return m_ + static_cast<int>(std::lround((x - xmin_) / (xmax_ - xmin_) * (c_.width() - 2 * m_))); }
  int py(double y) const {
    return c_.height() - m_ - static_cast<int>(std::lround((y - ymin_) / (ymax_ - ymin_) * (c_.height() - 2 * m_)));
  }

  void polyline(const std::vector<double>& x, const std::vector<double>& y, Rgb col) {
    for (std::size_t i = 1; i < x.size(); ++i) c_.line(px(x[i - 1]), py(y[i - 1]), px(x[i]), py(y[i]), col);
  }
  void scatter(const std::vector<double>& x, const std::vector<double>& y, Rgb col, int r = 1) {
    for (std::size_t i = 0; i < x.size(); ++i) c_.dot(px(x[i]), py(y[i]), r, col);
  }

 private:
  Canvas& c_;
  double xmin_, xmax_, ymin_, ymax_;
  int m_;
};

inline std::pair<double, double> finite_range(const std::vector<double>& v) {
  double lo = INFINITY, hi = -INFINITY;
  for (double x : v)
    if (std::isfinite(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (!std::isfinite(lo)) return {0, 1};
  return {lo, hi};
}

inline void write_sidecar(const std::filesystem::path& png, const nlohmann::json& j) {
  auto p = png;
  p.replace_extension(".json");
  std::ofstream(p) << j.dump(1) << "\n";
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Line chart of one or more series sharing axes.
inline void line_plot(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series,
                      bool log_x = false) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    for (double v : s.x) xs.push_back(log_x ? std::log10(v) : v);
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const auto [x0, x1] = finite_range(xs);
  const auto [y0, y1] = finite_range(ys);
  Canvas c(640, 400);
  Axes ax(c, x0, x1, std::min(0.0, y0), y1 > 0 ? y1 * 1.05 : 1.0);
  nlohmann::json meta = {{"title", title}, {"log_x", log_x}, {"series", nlohmann::json::array()}};
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<double> x = series[i].x;
    if (log_x)
      for (auto& v : x) v = std::log10(v);
    ax.polyline(x, series[i].y, kPalette[i % kPalette.size()]);
    ax.scatter(x, series[i].y, kPalette[i % kPalette.size()], x.size() < 50 ? 3 : 0);
    meta["series"].push_back({{"name", series[i].name}, {"points", series[i].x.size()}});
  }
  meta["x_range"] = {x0, x1};
  meta["y_range"] = {y0, y1};
  c.write_png(path);
  write_sidecar(path, meta);
}

struct ScatterFit {
  metrics::LinearFit rpn;
  metrics::LinearFit rcnn;
};

// IoU (x) against both score sources (y) with least-squares lines; fits are
// also written to the JSON sidecar.
inline ScatterFit score_scatter(const std::filesystem::path& path, const std::vector<metrics::ScorePoint>& pts) {
  std::vector<double> x, a, b;
  for (const auto& p : pts) {
    x.push_back(p.iou);
    a.push_back(p.rpn_score);
    b.push_back(p.rcnn_score);
  }
  ScatterFit fit{metrics::least_squares(x, a), metrics::least_squares(x, b)};
  Canvas c(640, 640);
  Axes ax(c, 0, 1, 0, 1);
  ax.scatter(x, a, kPalette[0], 1);
  ax.scatter(x, b, kPalette[1], 1);
  for (int s = 0; s < 2; ++s) {
    const auto& f = s == 0 ? fit.rpn : fit.rcnn;
    if (std::isfinite(f.slope)) ax.polyline({0.0, 1.0}, {f.intercept, f.slope + f.intercept}, kPalette[static_cast<std::size_t>(s)]);
  }
  c.write_png(path);
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  write_sidecar(path, {{"title", "proposal IoU vs score"},
                       {"points", pts.size()},
                       {"rpn", {{"slope", num(fit.rpn.slope)}, {"intercept", num(fit.rpn.intercept)}}},
                       {"rcnn", {{"slope", num(fit.rcnn.slope)}, {"intercept", num(fit.rcnn.intercept)}}}});
  return fit;
}

}  // namespace pclf::plot

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/rng.hpp"
#include "pcl_forge/synth/image.hpp"

namespace pclf::synth {

enum class ManipType { splice, copy_move, removal, pristine };

inline std::string_view to_string(ManipType t) {
  switch (t) {
    case ManipType::splice: return "splice";
    case ManipType::copy_move: return "copy_move";
    case ManipType::removal: return "removal";
    case ManipType::pristine: return "pristine";
  }
  return "?";
}

inline ManipType manip_type_from_string(std::string_view s) {
  if (s == "splice") return ManipType::splice;
  if (s == "copy_move") return ManipType::copy_move;
  if (s == "removal") return ManipType::removal;
  if (s == "pristine") return ManipType::pristine;
  throw InvalidArgument("unknown manipulation type: " + std::string(s));
}

struct SynthConfig {
  int size = 64;
  double noise_sigma_min = 0.01;
  double noise_sigma_max = 0.04;
  double area_min = 0.04;
  double area_max = 0.25;
  bool blur = true;
  double blur_sigma = 0.5;
  int regions = 1;
  int inpaint_iterations = 50;
  int max_shapes = 4;
};

// Procedural source image. `shapes` holds the visible pixels of each
// foreground shape after occlusion by later shapes.
struct BaseImage {
  Image image;
  std::uint64_t seed = 0;
  double noise_sigma = 0;
  std::vector<Mask> shapes;
};

struct TamperRecord {
  Image image;
  Mask mask;
  std::vector<Box> boxes;
  ManipType type = ManipType::splice;
  bool labeled = true;
};

namespace detail {

inline void rasterize_ellipse(Mask& m, double cx, double cy, double rx, double ry) {
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const double u = (x + 0.5 - cx) / rx, v = (y + 0.5 - cy) / ry;
      if (u * u + v * v <= 1.0) m.at(y, x) = 1;
    }
}

inline void rasterize_rect(Mask& m, int x0, int y0, int w, int h) {
  for (int y = std::max(0, y0); y < std::min(m.height, y0 + h); ++y)
    for (int x = std::max(0, x0); x < std::min(m.width, x0 + w); ++x) m.at(y, x) = 1;
}

inline void rasterize_triangle(Mask& m, const std::array<double, 6>& p) {
  auto edge = [](double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  };
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double e0 = edge(p[0], p[1], p[2], p[3], px, py);
      const double e1 = edge(p[2], p[3], p[4], p[5], px, py);
      const double e2 = edge(p[4], p[5], p[0], p[1], px, py);
      if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)) m.at(y, x) = 1;
    }
}

// Random connected region whose area is drawn inside [area_min, area_max] of the image.
inline Mask random_region(Rng& rng, int height, int width, const SynthConfig& cfg, double area_scale = 1.0) {
  const double total = static_cast<double>(height) * width;
  const double lo = cfg.area_min * area_scale, hi = cfg.area_max * area_scale;
  const double area = uniform(rng, lo + 0.15 * (hi - lo), hi - 0.25 * (hi - lo)) * total;
  const double aspect = uniform(rng, 0.6, 1.6);
  Mask m(height, width);
  if (uniform_int(rng, 0, 1) == 0) {
    const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 2, width - 1);
    const int h = std::clamp(static_cast<int>(std::lround(area / w)), 2, height - 1);
    rasterize_rect(m, uniform_int(rng, 0, width - w), uniform_int(rng, 0, height - h), w, h);
  } else {
    const double rx = std::sqrt(area * aspect / std::numbers::pi);
    const double ry = area / (std::numbers::pi * rx);
    const double cx = uniform(rng, rx + 0.5, width - rx - 0.5);
    const double cy = uniform(rng, ry + 0.5, height - ry - 0.5);
    rasterize_ellipse(m, cx, cy, rx, ry);
  }
  return m;
}

inline bool area_in_bounds(const Mask& m, const SynthConfig& cfg) {
  const double f = m.area_fraction();
  return f >= cfg.area_min && f <= cfg.area_max;
}

// Gaussian blur applied only to pixels on either side of the mask boundary.
inline void blur_boundary(Image& img, const Mask& mask, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) ksum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= ksum;

  Mask band(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      for (int dy = -1; dy <= 1 && !band.at(y, x); ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (mask.contains(y + dy, x + dx) && mask.at(y + dy, x + dx) != mask.at(y, x)) {
            band.at(y, x) = 1;
            break;
          }

  const Image src = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!band.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int sy = std::clamp(y + dy, 0, img.height - 1);
            const int sx = std::clamp(x + dx, 0, img.width - 1);
            acc += kernel[dy + radius] * kernel[dx + radius] * src.at(sy, sx, c);
          }
        img.at(y, x, c) = acc;
      }
    }
}

inline TamperRecord finish_record(Image image, Mask mask, ManipType type, const SynthConfig& cfg) {
  if (cfg.blur) blur_boundary(image, mask, cfg.blur_sigma);
  for (auto& v : image.pixels) v = std::clamp(v, 0.0, 1.0);
  TamperRecord rec;
  rec.boxes = component_boxes(mask);
  rec.image = std::move(image);
  rec.mask = std::move(mask);
  rec.type = type;
  return rec;
}

}  // namespace detail

// Low-frequency background, 1..max_shapes flat-colored shapes, then additive
// Gaussian sensor noise with a per-image sigma.
inline BaseImage generate_base_image(std::uint64_t seed, int size, const SynthConfig& cfg = {}) {
  PCLF_REQUIRE(size >= 32, InvalidArgument, "generate_base_image: size must be >= 32");
  Rng rng(seed);
  BaseImage out;
  out.seed = seed;
  out.image = Image(size, size);

  struct Wave {
    double amp, fx, fy, phase;
  };
  for (int c = 0; c < 3; ++c) {
    const double base = uniform(rng, 0.3, 0.7);
    const double gx = uniform(rng, -0.25, 0.25), gy = uniform(rng, -0.25, 0.25);
    std::array<Wave, 2> waves{};
    for (auto& w : waves) {
      const double angle = uniform(rng, 0, 2 * std::numbers::pi);
      const double freq = uniform(rng, 0.5, 2.0) * 2 * std::numbers::pi / size;
      w = {uniform(rng, 0.02, 0.08), freq * std::cos(angle), freq * std::sin(angle), uniform(rng, 0, 2 * std::numbers::pi)};
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = base + gx * (double(x) / size - 0.5) + gy * (double(y) / size - 0.5);
        for (const auto& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
        out.image.at(y, x, c) = v;
      }
  }

  const int n_shapes = uniform_int(rng, 1, std::max(1, cfg.max_shapes));
  for (int s = 0; s < n_shapes; ++s) {
    Mask m(size, size);
    // The first shape is large enough to be an inpainting target.
    const double extent = s == 0 ? uniform(rng, 0.28, 0.42) * size : uniform(rng, 0.12, 0.35) * size;
    const int kind = uniform_int(rng, 0, 2);
    const double cx = uniform(rng, extent / 2 + 1, size - extent / 2 - 1);
    const double cy = uniform(rng, extent / 2 + 1, size - extent / 2 - 1);
    if (kind == 0) {
      const int w = static_cast<int>(std::lround(extent * uniform(rng, 0.8, 1.0)));
      const int h = static_cast<int>(std::lround(extent * uniform(rng, 0.8, 1.0)));
      detail::rasterize_rect(m, static_cast<int>(cx - w / 2.0), static_cast<int>(cy - h / 2.0), w, h);
    } else if (kind == 1) {
      detail::rasterize_ellipse(m, cx, cy, extent / 2 * uniform(rng, 0.8, 1.0), extent / 2 * uniform(rng, 0.8, 1.0));
    } else {
      std::array<double, 6> p{};
      for (int k = 0; k < 3; ++k) {
        const double a = 2 * std::numbers::pi * (k / 3.0) + uniform(rng, -0.3, 0.3);
        p[2 * k] = cx + extent / 2 * std::cos(a);
        p[2 * k + 1] = cy + extent / 2 * std::sin(a);
      }
      detail::rasterize_triangle(m, p);
    }
    std::array<double, 3> color{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const double shade = uniform(rng, -0.1, 0.1);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        if (!m.at(y, x)) continue;
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = color[c] + shade * (double(y) / size - 0.5);
        for (auto& prev : out.shapes) prev.at(y, x) = 0;
      }
    out.shapes.push_back(std::move(m));
  }
  std::erase_if(out.shapes, [](const Mask& m) { return !m.any(); });

  out.noise_sigma = uniform(rng, cfg.noise_sigma_min, cfg.noise_sigma_max);
  std::normal_distribution<double> noise(0.0, out.noise_sigma);
  for (auto& v : out.image.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return out;
}

// Pastes a seeded connected region of the donor into the target.
inline TamperRecord apply_splice(const BaseImage& donor, const BaseImage& target, std::uint64_t seed,
                                 const SynthConfig& cfg = {}) {
  PCLF_REQUIRE(donor.image.same_size(target.image), InvalidArgument, "apply_splice: donor/target size mismatch");
  const int h = target.image.height, w = target.image.width;
  Rng rng(seed);
  Image out = target.image;
  Mask mask(h, w);
  const int regions = std::max(1, cfg.regions);
  for (int r = 0; r < regions; ++r) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      Mask region = detail::random_region(rng, h, w, cfg, 1.0 / regions);
      if (!region.any() || masks_intersect(dilate(region, 1), mask)) continue;
      Mask merged = mask;
      merged |= region;
      if (r == regions - 1 && !detail::area_in_bounds(merged, cfg)) continue;
      if (merged.area_fraction() > cfg.area_max) continue;
      const Box bb = tight_bbox(region);
      // Source location in the donor is independent of the paste location.
      const int sx = uniform_int(rng, 0, w - static_cast<int>(bb.width()));
      const int sy = uniform_int(rng, 0, h - static_cast<int>(bb.height()));
      const int ox = sx - static_cast<int>(bb.x1), oy = sy - static_cast<int>(bb.y1);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (region.at(y, x))
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = donor.image.at(y + oy, x + ox, c);
      mask = std::move(merged);
      placed = true;
    }
    if (!placed) throw GenerationFailure("apply_splice: could not place region within area bounds");
  }
  return detail::finish_record(std::move(out), std::move(mask), ManipType::splice, cfg);
}

struct CopyMoveRects {
  Box source, destination;
};

// Duplicates a rectangular patch to a disjoint location in the same image.
inline TamperRecord apply_copy_move(const BaseImage& base, std::uint64_t seed, const SynthConfig& cfg = {},
                                    std::vector<CopyMoveRects>* rects_out = nullptr) {
  const int h = base.image.height, w = base.image.width;
  PCLF_REQUIRE(h >= 32 && w >= 32, InvalidArgument, "apply_copy_move: image size must be >= 32");
  Rng rng(seed);
  Image out = base.image;
  Mask mask(h, w);
  const int regions = std::max(1, cfg.regions);
  const double total = double(h) * w;
  for (int r = 0; r < regions; ++r) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double lo = cfg.area_min / regions, hi = cfg.area_max / regions;
      const double area = uniform(rng, lo + 0.15 * (hi - lo), hi - 0.25 * (hi - lo)) * total;
      const double aspect = uniform(rng, 0.6, 1.6);
      const int pw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 2, w / 2);
      const int ph = std::clamp(static_cast<int>(std::lround(area / pw)), 2, h / 2);
      const int sx = uniform_int(rng, 0, w - pw), sy = uniform_int(rng, 0, h - ph);
      const int dx = uniform_int(rng, 0, w - pw), dy = uniform_int(rng, 0, h - ph);
      const Box src{double(sx), double(sy), double(sx + pw), double(sy + ph)};
      const Box dst{double(dx), double(dy), double(dx + pw), double(dy + ph)};
      if (intersection_area(src, dst) > 0) continue;
      Mask region(h, w);
      detail::rasterize_rect(region, dx, dy, pw, ph);
      if (masks_intersect(dilate(region, 1), mask)) continue;
      Mask merged = mask;
      merged |= region;
      if (merged.area_fraction() > cfg.area_max) continue;
      if (r == regions - 1 && !detail::area_in_bounds(merged, cfg)) continue;
      const Image snapshot = out;
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
          for (int c = 0; c < 3; ++c) out.at(dy + y, dx + x, c) = snapshot.at(sy + y, sx + x, c);
      if (rects_out) rects_out->push_back({src, dst});
      mask = std::move(merged);
      placed = true;
    }
    if (!placed) throw GenerationFailure("apply_copy_move: no disjoint destination after 100 retries");
  }
  return detail::finish_record(std::move(out), std::move(mask), ManipType::copy_move, cfg);
}

// Diffusion inpainting: masked pixels start at the mean of the 2-pixel ring
// outside the mask, then take `iterations` rounds of 4-neighbour averaging
// with everything outside the mask held fixed.
inline void inpaint_diffusion(Image& img, const Mask& mask, int iterations) {
  const Mask ring_zone = dilate(mask, 2);
  std::array<double, 3> mean{0, 0, 0};
  int ring_count = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (ring_zone.at(y, x) && !mask.at(y, x)) {
        ++ring_count;
        for (int c = 0; c < 3; ++c) mean[c] += img.at(y, x, c);
      }
  PCLF_REQUIRE(ring_count > 0, GenerationFailure, "inpaint: empty boundary ring");
  for (auto& m : mean) m /= ring_count;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x))
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = mean[c];

  constexpr int kDy[4] = {-1, 1, 0, 0};
  constexpr int kDx[4] = {0, 0, -1, 1};
  for (int it = 0; it < iterations; ++it) {
    const Image prev = img;
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x) {
        if (!mask.at(y, x)) continue;
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          int n = 0;
          for (int k = 0; k < 4; ++k) {
            if (!mask.contains(y + kDy[k], x + kDx[k])) continue;
            acc += prev.at(y + kDy[k], x + kDx[k], c);
            ++n;
          }
          img.at(y, x, c) = acc / n;
        }
      }
  }
}

// Erases one foreground shape (dilated by one pixel to cover its edge) and inpaints it.
inline TamperRecord apply_removal(const BaseImage& base, std::uint64_t seed, const SynthConfig& cfg = {}) {
  if (base.shapes.empty()) throw GenerationFailure("apply_removal: image has no foreground shape");
  std::vector<Mask> eligible;
  for (const auto& s : base.shapes) {
    Mask d = dilate(s, 1);
    if (detail::area_in_bounds(d, cfg) && connected_components(d).size() == 1) eligible.push_back(std::move(d));
  }
  if (eligible.empty()) throw GenerationFailure("apply_removal: no shape within the area bounds");
  Rng rng(seed);
  const Mask& chosen = eligible[static_cast<std::size_t>(uniform_int(rng, 0, int(eligible.size()) - 1))];
  Image out = base.image;
  inpaint_diffusion(out, chosen, cfg.inpaint_iterations);
  return detail::finish_record(std::move(out), chosen, ManipType::removal, cfg);
}

inline TamperRecord make_pristine(const BaseImage& base) {
  TamperRecord rec;
  rec.image = base.image;
  rec.mask = Mask(base.image.height, base.image.width);
  rec.type = ManipType::pristine;
  return rec;
}

}  // namespace pclf::synth

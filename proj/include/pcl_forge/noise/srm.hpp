#pragma once

#include <algorithm>
#include <iomanip>
#include <limits>
#include <ostream>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/tensor.hpp"
#include "pcl_forge/noise/srm_kernels.hpp"
#include "pcl_forge/synth/image.hpp"

namespace pclf::noise {

inline constexpr double kDefaultSrmTruncation = 2.0;

// Same-size cross-correlation with the three SRM kernels over a CHW image with
// values in [0,1] (scaled to [0,255] internally). Borders replicate the edge
// pixel. Each tap is applied to the difference from the centre pixel, which is
// identical to the plain correlation for zero-sum kernels and makes constant
// inputs map to exactly zero.
template <typename T>
void srm_filter_chw(const T* chw, int height, int width, T* out_khw,
                    double truncation = std::numeric_limits<double>::infinity()) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int k = 0; k < kSrmKernelCount; ++k)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double acc = 0;
        for (int c = 0; c < 3; ++c) {
          const T* img = chw + c * plane;
          const double centre = img[static_cast<std::size_t>(y) * width + x];
          for (int i = 0; i < kSrmKernelSize; ++i) {
            const int sy = std::clamp(y + i - 2, 0, height - 1);
            for (int j = 0; j < kSrmKernelSize; ++j) {
              const double coef = srm_coefficient(k, i, j);
              if (coef == 0) continue;
              const int sx = std::clamp(x + j - 2, 0, width - 1);
              acc += coef * (static_cast<double>(img[static_cast<std::size_t>(sy) * width + sx]) - centre);
            }
          }
        }
        acc *= 255.0;
        out_khw[k * plane + static_cast<std::size_t>(y) * width + x] =
            static_cast<T>(std::clamp(acc, -truncation, truncation));
      }
}

// Batched form over an [N,3,H,W] tensor.
template <typename T>
Tensor<T> srm_residual(const Tensor<T>& images, double truncation = kDefaultSrmTruncation) {
  PCLF_REQUIRE(images.rank() == 4 && images.dim(1) == 3, InvalidArgument, "srm_residual: expected [N,3,H,W]");
  const int n = images.dim(0), h = images.dim(2), w = images.dim(3);
  Tensor<T> out({n, kSrmKernelCount, h, w});
  for (int i = 0; i < n; ++i) srm_filter_chw(images.slice(i), h, w, out.slice(i), truncation);
  return out;
}

// HWC image form; returns a [3,H,W] noise map.
inline Tensor<double> srm_residual(const synth::Image& image, double truncation = kDefaultSrmTruncation) {
  PCLF_REQUIRE(image.pixels.size() == static_cast<std::size_t>(image.height) * image.width * 3, InvalidArgument,
               "srm_residual: image must have 3 channels");
  Tensor<double> chw({3, image.height, image.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) chw[(static_cast<std::size_t>(c) * image.height + y) * image.width + x] = image.at(y, x, c);
  Tensor<double> out({kSrmKernelCount, image.height, image.width});
  srm_filter_chw(chw.data(), image.height, image.width, out.data(), truncation);
  return out;
}

inline void dump_srm(std::ostream& os) {
  os << "# SRM residual kernels (5x5, numerator / divisor); applied to each RGB channel and summed.\n";
  os << "# Input scaled to [0,255]; residual truncated to [-T, T], T = " << kDefaultSrmTruncation << "\n";
  for (int k = 0; k < kSrmKernelCount; ++k) {
    os << "kernel " << k << " divisor " << kSrmDivisors[static_cast<std::size_t>(k)] << "\n";
    for (const auto& row : kSrmNumerators[static_cast<std::size_t>(k)]) {
      for (std::size_t j = 0; j < row.size(); ++j) os << (j ? " " : "") << std::setw(4) << row[j];
      os << "\n";
    }
  }
}

}  // namespace pclf::noise

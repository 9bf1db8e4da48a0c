#pragma once

#include <algorithm>
#include <cmath>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/tensor.hpp"

namespace pclf::noise {

inline constexpr int kConstrainedSize = 5;
inline constexpr int kConstrainedCenter = 2;
inline constexpr int kConstrainedTaps = kConstrainedSize * kConstrainedSize;
inline constexpr double kConstraintTolerance = 1e-6;

// Weights are [K, C, 5, 5]. Every 5x5 slice is constrained: centre = -1 and the
// 24 remaining taps sum to 1, so each slice computes a prediction residual.
struct ProjectionReport {
  int resets = 0;  // slices whose off-centre sum was zero and were reinitialized
};

template <typename T>
ProjectionReport project_constrained(Tensor<T>& weights) {
  PCLF_REQUIRE(weights.rank() == 4 && weights.dim(2) == kConstrainedSize && weights.dim(3) == kConstrainedSize,
               InvalidArgument, "project_constrained: expected [K,C,5,5]");
  ProjectionReport report;
  const int slices = weights.dim(0) * weights.dim(1);
  constexpr int centre = kConstrainedCenter * kConstrainedSize + kConstrainedCenter;
  for (int s = 0; s < slices; ++s) {
    T* w = weights.data() + static_cast<std::size_t>(s) * kConstrainedTaps;
    w[centre] = T(0);
    double sum = 0;
    for (int t = 0; t < kConstrainedTaps; ++t) sum += w[t];
    if (sum == 0.0) {
      for (int t = 0; t < kConstrainedTaps; ++t) w[t] = static_cast<T>(1.0 / (kConstrainedTaps - 1));
      ++report.resets;
    } else {
      for (int t = 0; t < kConstrainedTaps; ++t) w[t] = static_cast<T>(w[t] / sum);
    }
    w[centre] = T(-1);
  }
  return report;
}

// Largest violation of either constraint over all slices.
template <typename T>
double constraint_violation(const Tensor<T>& weights) {
  const int slices = weights.dim(0) * weights.dim(1);
  constexpr int centre = kConstrainedCenter * kConstrainedSize + kConstrainedCenter;
  double worst = 0;
  for (int s = 0; s < slices; ++s) {
    const T* w = weights.data() + static_cast<std::size_t>(s) * kConstrainedTaps;
    double sum = 0;
    for (int t = 0; t < kConstrainedTaps; ++t)
      if (t != centre) sum += w[t];
    worst = std::max({worst, std::abs(static_cast<double>(w[centre]) + 1.0), std::abs(sum - 1.0)});
  }
  return worst;
}

template <typename T>
bool satisfies_constraint(const Tensor<T>& weights, double tol = kConstraintTolerance) {
  return constraint_violation(weights) <= tol;
}

// Same-size correlation of [N,C,H,W] images with [K,C,5,5] constrained
// weights, edge-replicated borders, no bias, no nonlinearity. The centre tap
// is folded in through the constraint: out = sum_{t != centre} w_t (x_t - x_centre).
template <typename T>
Tensor<T> constrained_forward_unchecked(const Tensor<T>& images, const Tensor<T>& weights) {
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const int k = weights.dim(0);
  PCLF_REQUIRE(weights.dim(1) == c, InvalidArgument, "constrained_forward: channel mismatch");
  Tensor<T> out({n, k, h, w});
  for (int b = 0; b < n; ++b)
    for (int ko = 0; ko < k; ++ko)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          T acc = 0;
          for (int ci = 0; ci < c; ++ci) {
            const T centre = images.at(b, ci, y, x);
            const T* wk = weights.data() + (static_cast<std::size_t>(ko) * c + ci) * kConstrainedTaps;
            for (int i = 0; i < kConstrainedSize; ++i) {
              const int sy = std::clamp(y + i - kConstrainedCenter, 0, h - 1);
              for (int j = 0; j < kConstrainedSize; ++j) {
                if (i == kConstrainedCenter && j == kConstrainedCenter) continue;
                const int sx = std::clamp(x + j - kConstrainedCenter, 0, w - 1);
                acc += wk[i * kConstrainedSize + j] * (images.at(b, ci, sy, sx) - centre);
              }
            }
          }
          out.at(b, ko, y, x) = acc;
        }
  return out;
}

template <typename T>
Tensor<T> constrained_forward(const Tensor<T>& images, const Tensor<T>& weights) {
  if (!satisfies_constraint(weights))
    throw PreconditionViolation("constrained_forward: weights violate the centre/off-centre constraint");
  return constrained_forward_unchecked(images, weights);
}

// Accumulates dL/dW for the off-centre taps given dL/dout; the centre tap is
// fixed by the constraint and receives no gradient.
template <typename T>
void constrained_backward(const Tensor<T>& images, const Tensor<T>& grad_out, Tensor<T>& grad_weights) {
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const int k = grad_out.dim(1);
  for (int b = 0; b < n; ++b)
    for (int ko = 0; ko < k; ++ko)
      for (int ci = 0; ci < c; ++ci) {
        T* gw = grad_weights.data() + (static_cast<std::size_t>(ko) * c + ci) * kConstrainedTaps;
        for (int i = 0; i < kConstrainedSize; ++i)
          for (int j = 0; j < kConstrainedSize; ++j) {
            if (i == kConstrainedCenter && j == kConstrainedCenter) continue;
            T acc = 0;
            for (int y = 0; y < h; ++y) {
              const int sy = std::clamp(y + i - kConstrainedCenter, 0, h - 1);
              for (int x = 0; x < w; ++x) {
                const int sx = std::clamp(x + j - kConstrainedCenter, 0, w - 1);
                acc += grad_out.at(b, ko, y, x) * (images.at(b, ci, sy, sx) - images.at(b, ci, y, x));
              }
            }
            gw[i * kConstrainedSize + j] += acc;
          }
      }
}

}  // namespace pclf::noise

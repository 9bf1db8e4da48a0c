#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pcl_forge/common/error.hpp"

namespace pclf::detect {

// Exact bilinear pooling of two vectors: flattened outer product (index
// i * |b| + j), signed square root, then L2 normalization. A zero result is
// returned as-is without normalizing.
template <typename T>
struct BilinearCache {
  std::vector<T> outer;   // pre-sqrt entries
  std::vector<T> fused;   // normalized output
  double norm = 0;        // L2 norm of the signed-sqrt vector
};

template <typename T>
std::vector<T> bilinear_fuse(std::span<const T> a, std::span<const T> b, BilinearCache<T>* cache = nullptr) {
  PCLF_REQUIRE(a.size() == b.size(), InvalidArgument, "bilinear_fuse: dimension mismatch");
  const std::size_t d = a.size();
  std::vector<T> outer(d * d), y(d * d);
  double sq = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const T v = a[i] * b[j];
      outer[i * d + j] = v;
      const T s = v >= T(0) ? std::sqrt(v) : -std::sqrt(-v);
      y[i * d + j] = s;
      sq += static_cast<double>(s) * s;
    }
  const double norm = std::sqrt(sq);
  if (norm > 0)
    for (auto& v : y) v = static_cast<T>(v / norm);
  if (cache) {
    cache->outer = std::move(outer);
    cache->fused = y;
    cache->norm = norm;
  }
  return y;
}

// Gradients w.r.t. both inputs given dL/d(fused). The signed square root has
// an unbounded slope at zero; exact zeros pass no gradient.
template <typename T>
void bilinear_backward(std::span<const T> a, std::span<const T> b, const BilinearCache<T>& cache,
                       std::span<const T> grad_fused, std::span<T> grad_a, std::span<T> grad_b) {
  const std::size_t d = a.size();
  if (cache.norm <= 0) return;
  double dot = 0;
  for (std::size_t k = 0; k < d * d; ++k) dot += static_cast<double>(grad_fused[k]) * cache.fused[k];
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = i * d + j;
      const double gy = (grad_fused[k] - dot * cache.fused[k]) / cache.norm;
      const double v = cache.outer[k];
      if (v == 0) continue;
      const double gx = gy * 0.5 / std::sqrt(std::abs(v));
      grad_a[i] += static_cast<T>(gx * b[j]);
      grad_b[j] += static_cast<T>(gx * a[i]);
    }
}

}  // namespace pclf::detect

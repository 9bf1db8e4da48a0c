#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/tensor.hpp"
#include "pcl_forge/pcl/pairs.hpp"

namespace pclf::pcl {

inline constexpr double kNormGuard = 1e-12;

struct LossDiagnostics {
  int numeric_guards = 0;  // zero-norm rows that had the guard added
};

// Proposal contrastive loss over projected rows z_r, z_n ([R, p] each).
//
// For every positive (i_r, i_n) the RGB term is an InfoNCE cross-entropy whose
// logits are s(z_r[i_r], z_n[i_n]) followed by s(z_r[i_r], z_n[j]) for every
// negatives_rgb entry anchored at i_r; the noise term mirrors it with the
// roles of the streams swapped. s(u, v) = u.v / (tau |u| |v|). Each enabled
// term is averaged over the N positives and the terms are summed. N = 0 gives
// exactly 0 and leaves the gradients untouched.
//
// Gradients, when requested, are accumulated into grad_r / grad_n.
template <typename T>
double pcl_loss(const Tensor<T>& z_r, const Tensor<T>& z_n, const PairSet& pairs, double tau,
                Tensor<T>* grad_r = nullptr, Tensor<T>* grad_n = nullptr, LossDiagnostics* diag = nullptr) {
  PCLF_REQUIRE(tau > 0, InvalidArgument, "pcl_loss: temperature must be positive");
  const std::size_t n_pos = pairs.positives.size();
  if (n_pos == 0) return 0.0;
  PCLF_REQUIRE(z_r.rank() == 2 && z_n.rank() == 2 && z_r.dim(1) == z_n.dim(1), InvalidArgument,
               "pcl_loss: z_r and z_n must be [R, p] with equal p");
  const int rows_r = z_r.dim(0), rows_n = z_n.dim(0), dim = z_r.dim(1);

  auto norms = [&](const Tensor<T>& z) {
    std::vector<double> out(static_cast<std::size_t>(z.dim(0)));
    for (int i = 0; i < z.dim(0); ++i) {
      double s = 0;
      for (int k = 0; k < dim; ++k) s += static_cast<double>(z.at(i, k)) * z.at(i, k);
      out[static_cast<std::size_t>(i)] = std::sqrt(s);
      if (out[static_cast<std::size_t>(i)] == 0) {
        out[static_cast<std::size_t>(i)] += kNormGuard;
        if (diag) ++diag->numeric_guards;
      }
    }
    return out;
  };
  const std::vector<double> norm_r = norms(z_r), norm_n = norms(z_n);

  std::vector<std::vector<int>> neg_rgb(static_cast<std::size_t>(rows_r)), neg_noise(static_cast<std::size_t>(rows_n));
  for (auto [a, b] : pairs.negatives_rgb) neg_rgb.at(static_cast<std::size_t>(a)).push_back(b);
  for (auto [a, b] : pairs.negatives_noise) neg_noise.at(static_cast<std::size_t>(a)).push_back(b);

  const double inv_n = 1.0 / static_cast<double>(n_pos);
  double total = 0;

  // One InfoNCE row: anchor row `u` of `zu`, candidates rows of `zv` (first is positive).
  std::vector<double> logits, weights;
  auto term = [&](const Tensor<T>& zu, const std::vector<double>& nu, int u, const Tensor<T>& zv,
                  const std::vector<double>& nv, const std::vector<int>& cand, Tensor<T>* gu, Tensor<T>* gv) {
    logits.resize(cand.size());
    for (std::size_t k = 0; k < cand.size(); ++k) {
      double dot = 0;
      for (int d = 0; d < dim; ++d) dot += static_cast<double>(zu.at(u, d)) * zv.at(cand[k], d);
      logits[k] = dot / (tau * nu[static_cast<std::size_t>(u)] * nv[static_cast<std::size_t>(cand[k])]);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    const double lse = mx + std::log(z);
    total += inv_n * (lse - logits[0]);
    if (!gu && !gv) return;
    weights.resize(cand.size());
    for (std::size_t k = 0; k < cand.size(); ++k) weights[k] = inv_n * (std::exp(logits[k] - lse) - (k == 0 ? 1.0 : 0.0));
    const double n_u = nu[static_cast<std::size_t>(u)];
    for (std::size_t k = 0; k < cand.size(); ++k) {
      const int v = cand[k];
      const double n_v = nv[static_cast<std::size_t>(v)];
      const double cosine = logits[k] * tau;
      const double w = weights[k];
      for (int d = 0; d < dim; ++d) {
        const double uh = zu.at(u, d) / n_u, vh = zv.at(v, d) / n_v;
        if (gu) gu->at(u, d) += static_cast<T>(w * (vh - cosine * uh) / (tau * n_u));
        if (gv) gv->at(v, d) += static_cast<T>(w * (uh - cosine * vh) / (tau * n_v));
      }
    }
  };

  std::vector<int> cand;
  for (auto [ir, in] : pairs.positives) {
    if (pairs.rgb_term) {
      cand.assign(1, in);
      const auto& negs = neg_rgb.at(static_cast<std::size_t>(ir));
      cand.insert(cand.end(), negs.begin(), negs.end());
      term(z_r, norm_r, ir, z_n, norm_n, cand, grad_r, grad_n);
    }
    if (pairs.noise_term) {
      cand.assign(1, ir);
      const auto& negs = neg_noise.at(static_cast<std::size_t>(in));
      cand.insert(cand.end(), negs.begin(), negs.end());
      term(z_n, norm_n, in, z_r, norm_r, cand, grad_n, grad_r);
    }
  }
  return total;
}

}  // namespace pclf::pcl

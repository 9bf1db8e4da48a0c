#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/error.hpp"

namespace pclf::train {

inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smooth_l1_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); }

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// One sampled anchor: objectness logit, binary label, predicted and target deltas.
struct AnchorSample {
  double logit = 0;
  int label = 0;
  Deltas pred{0, 0, 0, 0};
  Deltas target{0, 0, 0, 0};
};

struct LossPair {
  double cls = 0;
  double loc = 0;  // unweighted
  double weight = 1;
  double weighted_loc() const { return weight * loc; }
  double total() const { return cls + weighted_loc(); }
};

// Binary cross-entropy averaged over the sampled anchors plus smooth-L1 over
// the positives' deltas, normalized by the same sample count. Optional
// outputs receive d(cls)/d(logit) and d(loc)/d(pred).
inline LossPair rpn_loss(std::span<const AnchorSample> samples, double lambda1, std::vector<double>* grad_logit = nullptr,
                         std::vector<Deltas>* grad_pred = nullptr) {
  LossPair out;
  out.weight = lambda1;
  if (grad_logit) grad_logit->assign(samples.size(), 0.0);
  if (grad_pred) grad_pred->assign(samples.size(), Deltas{0, 0, 0, 0});
  if (samples.empty()) return out;
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out.cls += inv * (softplus(s.logit) - s.label * s.logit);
    if (grad_logit) (*grad_logit)[i] = inv * (sigmoid(s.logit) - s.label);
    if (s.label != 1) continue;
    for (int c = 0; c < 4; ++c) {
      const double d = s.pred[static_cast<std::size_t>(c)] - s.target[static_cast<std::size_t>(c)];
      out.loc += inv * smooth_l1(d);
      if (grad_pred) (*grad_pred)[i][static_cast<std::size_t>(c)] = inv * smooth_l1_grad(d);
    }
  }
  return out;
}

// One sampled RoI: two-way logits (authentic, tampered), label, deltas.
struct RoiSample {
  double logit_authentic = 0;
  double logit_tampered = 0;
  int label = 0;
  Deltas pred{0, 0, 0, 0};
  Deltas target{0, 0, 0, 0};
};

// Softmax cross-entropy averaged over the sampled RoIs plus smooth-L1 over the
// tampered RoIs' deltas, normalized by the same count. grad_logits holds
// (d/d authentic, d/d tampered) per sample.
inline LossPair rcnn_loss(std::span<const RoiSample> samples, double lambda2,
                          std::vector<std::array<double, 2>>* grad_logits = nullptr,
                          std::vector<Deltas>* grad_pred = nullptr) {
  LossPair out;
  out.weight = lambda2;
  if (grad_logits) grad_logits->assign(samples.size(), {0, 0});
  if (grad_pred) grad_pred->assign(samples.size(), Deltas{0, 0, 0, 0});
  if (samples.empty()) return out;
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const double mx = std::max(s.logit_authentic, s.logit_tampered);
    const double lse = mx + std::log(std::exp(s.logit_authentic - mx) + std::exp(s.logit_tampered - mx));
    out.cls += inv * (lse - (s.label == 1 ? s.logit_tampered : s.logit_authentic));
    if (grad_logits) {
      const double p1 = std::exp(s.logit_tampered - lse);
      (*grad_logits)[i] = {inv * ((1 - p1) - (s.label == 0 ? 1 : 0)), inv * (p1 - (s.label == 1 ? 1 : 0))};
    }
    if (s.label != 1) continue;
    for (int c = 0; c < 4; ++c) {
      const double d = s.pred[static_cast<std::size_t>(c)] - s.target[static_cast<std::size_t>(c)];
      out.loc += inv * smooth_l1(d);
      if (grad_pred) (*grad_pred)[i][static_cast<std::size_t>(c)] = inv * smooth_l1_grad(d);
    }
  }
  return out;
}

// Warm-up weight of the unlabeled term: exp(-5 * max(1 - m/M, 0)^2).
inline double ramp_weight(double step, double warmup) {
  PCLF_REQUIRE(step >= 0, InvalidArgument, "ramp_weight: step must be non-negative");
  PCLF_REQUIRE(warmup >= 1, InvalidArgument, "ramp_weight: warm-up length must be >= 1");
  const double r = std::max(1.0 - step / warmup, 0.0);
  return std::exp(-5.0 * r * r);
}

struct LossWeights {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double beta = 0.01;
  double warmup = 2000;
};

struct LossBreakdown {
  double rpn_cls = 0, rpn_loc = 0, rcnn_cls = 0, rcnn_loc = 0;
  double pcl_labeled = 0, pcl_unlabeled = 0;
  double lambda1 = 10, lambda2 = 1, beta = 0, omega = 0;
  double total = 0;

  double recombine() const {
    return rpn_cls + lambda1 * rpn_loc + rcnn_cls + lambda2 * rcnn_loc + beta * pcl_labeled + omega * pcl_unlabeled;
  }
};

// Labeled objective: detection losses plus beta times the contrastive term.
inline LossBreakdown total_loss_labeled(const LossPair& rpn, const LossPair& rcnn, double pcl, const LossWeights& w) {
  LossBreakdown b;
  b.rpn_cls = rpn.cls;
  b.rpn_loc = rpn.loc;
  b.rcnn_cls = rcnn.cls;
  b.rcnn_loc = rcnn.loc;
  b.pcl_labeled = pcl;
  b.lambda1 = w.lambda1;
  b.lambda2 = w.lambda2;
  b.beta = w.beta;
  b.omega = 0;
  b.total = b.recombine();
  return b;
}

// Mixed objective: the labeled objective plus omega(m) times the unlabeled contrastive term.
inline LossBreakdown total_loss_semi(const LossBreakdown& labeled, double pcl_unlabeled, const LossWeights& w,
                                     double step) {
  LossBreakdown b = labeled;
  b.pcl_unlabeled = pcl_unlabeled;
  b.omega = ramp_weight(step, w.warmup);
  b.total = b.recombine();
  return b;
}

}  // namespace pclf::train

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/detect/proposal.hpp"
#include "pcl_forge/synth/image.hpp"

namespace pclf::metrics {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// IoU with a flag for zero-area inputs, which score 0.
inline double iou(const Box& a, const Box& b, bool* degenerate = nullptr) {
  const bool bad = !(a.area() > 0) || !(b.area() > 0);
  if (degenerate) *degenerate = bad;
  return bad ? 0.0 : box_iou(a, b);
}

// Detections (sorted or not) and ground truth of one image.
struct ImageDetections {
  std::vector<detect::Detection> detections;
  std::vector<Box> gt;
};

// All-point interpolated AP. Detections from all images are ranked by score
// and greedily matched to the best unmatched gt of their image with
// IoU > threshold. Equal scores are processed as one block so the result does
// not depend on image order. NaN when there is no ground truth at all.
inline double average_precision(std::span<const ImageDetections> images, double iou_threshold) {
  struct Ref {
    double score;
    int image;
    int det;
  };
  std::vector<Ref> refs;
  std::size_t total_gt = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    total_gt += images[i].gt.size();
    for (std::size_t d = 0; d < images[i].detections.size(); ++d)
      refs.push_back({images[i].detections[d].score, static_cast<int>(i), static_cast<int>(d)});
  }
  if (total_gt == 0) return kNaN;
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });

  std::vector<std::vector<char>> used(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].gt.size(), 0);

  std::vector<double> recall{0.0}, precision{1.0};
  std::size_t tp = 0, seen = 0;
  for (std::size_t k = 0; k < refs.size();) {
    std::size_t end = k;
    while (end < refs.size() && refs[end].score == refs[k].score) ++end;
    // Within a tie block, each image is matched in its own detection order.
    std::vector<Ref> block(refs.begin() + static_cast<std::ptrdiff_t>(k), refs.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(block.begin(), block.end(), [](const Ref& a, const Ref& b) {
      return a.image != b.image ? a.image < b.image : a.det < b.det;
    });
    for (const auto& r : block) {
      const auto& img = images[static_cast<std::size_t>(r.image)];
      const Box& box = img.detections[static_cast<std::size_t>(r.det)].box;
      double best = iou_threshold;
      int best_g = -1;
      for (std::size_t g = 0; g < img.gt.size(); ++g) {
        if (used[static_cast<std::size_t>(r.image)][g]) continue;
        const double v = iou(box, img.gt[g]);
        if (v > best) {
          best = v;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0) {
        used[static_cast<std::size_t>(r.image)][static_cast<std::size_t>(best_g)] = 1;
        ++tp;
      }
      ++seen;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    k = end;
  }
  // Precision envelope, then area under the step curve.
  for (std::size_t i = precision.size() - 1; i-- > 1;) precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0;
  for (std::size_t i = 1; i < recall.size(); ++i) ap += (recall[i] - recall[i - 1]) * precision[i];
  return ap;
}

inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back((50.0 + 5.0 * k) / 100.0);
  return t;
}

inline double ap50_95(std::span<const ImageDetections> images) {
  double sum = 0;
  for (double t : coco_thresholds()) sum += average_precision(images, t);
  return sum / 10.0;
}

inline double image_score(std::span<const detect::Detection> detections) {
  double s = 0;
  for (const auto& d : detections) s = std::max(s, d.score);
  return s;
}

// Mann-Whitney AUC with half credit for ties; NaN unless both classes occur.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  PCLF_REQUIRE(scores.size() == labels.size(), InvalidArgument, "roc_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double n_pos = 0, n_neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += avg_rank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return kNaN;
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// 2TP / (2TP + FP + FN); 0 when there are no true positives.
inline double f1_from_counts(const Confusion& c) {
  if (c.tp == 0) return 0.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

inline double f1_binary(std::span<const int> predicted, std::span<const int> truth) {
  PCLF_REQUIRE(predicted.size() == truth.size(), InvalidArgument, "f1_binary: size mismatch");
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && truth[i]) ++c.tp;
    else if (predicted[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  return f1_from_counts(c);
}

// Box-rasterized prediction mask: a pixel is set when its centre lies inside
// a detection with score > threshold.
inline synth::Mask rasterize_boxes(std::span<const detect::Detection> detections, int width, int height,
                                   double score_threshold = 0.5) {
  synth::Mask m(height, width);
  for (const auto& d : detections) {
    if (!(d.score > score_threshold)) continue;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        if (cx > d.box.x1 && cx < d.box.x2 && cy > d.box.y1 && cy < d.box.y2) m.at(y, x) = 1;
      }
  }
  return m;
}

inline double pixel_f1(const synth::Mask& predicted, const synth::Mask& truth) {
  PCLF_REQUIRE(predicted.width == truth.width && predicted.height == truth.height, InvalidArgument,
               "pixel_f1: mask size mismatch");
  std::vector<int> p(predicted.bits.begin(), predicted.bits.end()), t(truth.bits.begin(), truth.bits.end());
  return f1_binary(p, t);
}

// Sample Pearson correlation; NaN for fewer than two points or zero variance.
inline double pearson_cc(std::span<const double> x, std::span<const double> y) {
  PCLF_REQUIRE(x.size() == y.size(), InvalidArgument, "pearson_cc: size mismatch");
  const std::size_t n = x.size();
  if (n < 2) return kNaN;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

// Least-squares line y = slope * x + intercept.
struct LinearFit {
  double slope = kNaN;
  double intercept = kNaN;
};

inline LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  PCLF_REQUIRE(x.size() == y.size(), InvalidArgument, "least_squares: size mismatch");
  const std::size_t n = x.size();
  if (n < 2) return {};
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0) return {};
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

struct ScorePoint {
  double iou = 0;
  double rpn_score = 0;
  double rcnn_score = 0;
};

struct ScoreAnalysis {
  std::vector<ScorePoint> points;
  double pcc_rpn = kNaN;
  double pcc_rcnn = kNaN;
};

// One point per proposal: its best IoU with the image's gt against the RPN
// objectness and the fused-head tamper probability.
inline ScoreAnalysis score_iou_analysis(std::span<const std::vector<detect::Proposal>> proposals,
                                        std::span<const std::vector<Box>> gt) {
  PCLF_REQUIRE(proposals.size() == gt.size(), InvalidArgument, "score_iou_analysis: size mismatch");
  ScoreAnalysis out;
  for (std::size_t i = 0; i < proposals.size(); ++i)
    for (const auto& p : proposals[i]) {
      double best = 0;
      for (const auto& g : gt[i]) best = std::max(best, iou(p.box, g));
      out.points.push_back({best, p.objectness, p.rcnn_score});
    }
  std::vector<double> x, a, b;
  for (const auto& pt : out.points) {
    x.push_back(pt.iou);
    a.push_back(pt.rpn_score);
    b.push_back(pt.rcnn_score);
  }
  out.pcc_rpn = pearson_cc(x, a);
  out.pcc_rcnn = pearson_cc(x, b);
  return out;
}

}  // namespace pclf::metrics

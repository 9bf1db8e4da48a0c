#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/error.hpp"

namespace pclf::pcl {

enum class Strategy { pcl, pcl_rgb, pcl_noise, pcl_fcl, off };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::pcl: return "pcl";
    case Strategy::pcl_rgb: return "pcl_rgb";
    case Strategy::pcl_noise: return "pcl_noise";
    case Strategy::pcl_fcl: return "pcl_fcl";
    case Strategy::off: return "off";
  }
  return "?";
}

inline Strategy strategy_from_string(std::string_view s) {
  for (auto v : {Strategy::pcl, Strategy::pcl_rgb, Strategy::pcl_noise, Strategy::pcl_fcl, Strategy::off})
    if (s == to_string(v)) return v;
  throw InvalidArgument("unknown pcl strategy: " + std::string(s));
}

enum class PartitionSource { supervised_iou, unlabeled_rcnn_score, unlabeled_rpn_score };

// Which score drives the partition of unlabeled proposals.
enum class ScoreSource { rcnn, rpn };

inline ScoreSource score_source_from_string(std::string_view s) {
  if (s == "rcnn") return ScoreSource::rcnn;
  if (s == "rpn") return ScoreSource::rpn;
  throw InvalidArgument("unknown score source: " + std::string(s));
}

inline std::string_view to_string(ScoreSource s) { return s == ScoreSource::rcnn ? "rcnn" : "rpn"; }

// Proposal indices split into tampered and authentic sets.
struct Partition {
  std::vector<int> tampered;
  std::vector<int> authentic;
  PartitionSource source = PartitionSource::supervised_iou;

  std::size_t size() const { return tampered.size() + authentic.size(); }
};

// Tampered iff the best IoU against any ground-truth box strictly exceeds epsilon.
inline Partition assign_supervised(std::span<const Box> proposals, std::span<const Box> gt, double epsilon) {
  PCLF_REQUIRE(!gt.empty(), InvalidArgument, "assign_supervised: labeled image without ground-truth boxes");
  Partition p;
  p.source = PartitionSource::supervised_iou;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0;
    for (const auto& g : gt) best = std::max(best, box_iou(proposals[i], g));
    (best > epsilon ? p.tampered : p.authentic).push_back(static_cast<int>(i));
  }
  return p;
}

// Tampered iff the predicted score strictly exceeds delta. NaN marks a
// proposal that does not carry the requested score.
inline Partition assign_unlabeled(std::span<const double> scores, double delta, ScoreSource source) {
  Partition p;
  p.source = source == ScoreSource::rcnn ? PartitionSource::unlabeled_rcnn_score : PartitionSource::unlabeled_rpn_score;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i]))
      throw PreconditionViolation("assign_unlabeled: proposal " + std::to_string(i) + " is missing its " +
                                  std::string(to_string(source)) + " score");
    (scores[i] > delta ? p.tampered : p.authentic).push_back(static_cast<int>(i));
  }
  return p;
}

// Index pairs into the projected RGB (z^r) and noise (z^n) feature rows.
// positives: (rgb row, noise row) of the same proposal.
// negatives_rgb: (rgb anchor row, noise row) compared against the positive's rgb side.
// negatives_noise: (noise anchor row, rgb row) compared against the positive's noise side.
struct PairSet {
  std::vector<std::pair<int, int>> positives;
  std::vector<std::pair<int, int>> negatives_rgb;
  std::vector<std::pair<int, int>> negatives_noise;
  bool rgb_term = true;
  bool noise_term = true;
  Strategy strategy = Strategy::pcl;

  std::size_t n_positive() const { return positives.size(); }
  bool empty() const { return positives.empty(); }
};

inline PairSet build_pairs(const Partition& part, Strategy strategy) {
  PairSet ps;
  ps.strategy = strategy;
  if (strategy == Strategy::off) return ps;
  if (strategy == Strategy::pcl_fcl) {
    std::vector<int> all = part.tampered;
    all.insert(all.end(), part.authentic.begin(), part.authentic.end());
    std::sort(all.begin(), all.end());
    for (int i : all) {
      ps.positives.emplace_back(i, i);
      for (int j : all)
        if (j != i) {
          ps.negatives_rgb.emplace_back(i, j);
          ps.negatives_noise.emplace_back(i, j);
        }
    }
    return ps;
  }
  ps.rgb_term = strategy != Strategy::pcl_noise;
  ps.noise_term = strategy != Strategy::pcl_rgb;
  for (int t : part.tampered) {
    ps.positives.emplace_back(t, t);
    for (int a : part.authentic) {
      if (ps.rgb_term) ps.negatives_rgb.emplace_back(t, a);
      if (ps.noise_term) ps.negatives_noise.emplace_back(t, a);
    }
  }
  return ps;
}

// Merges per-image pair sets whose indices are offset into one shared row space.
inline void append_pairs(PairSet& dst, const PairSet& src, int offset) {
  for (auto [a, b] : src.positives) dst.positives.emplace_back(a + offset, b + offset);
  for (auto [a, b] : src.negatives_rgb) dst.negatives_rgb.emplace_back(a + offset, b + offset);
  for (auto [a, b] : src.negatives_noise) dst.negatives_noise.emplace_back(a + offset, b + offset);
  dst.rgb_term = src.rgb_term;
  dst.noise_term = src.noise_term;
  dst.strategy = src.strategy;
}

}  // namespace pclf::pcl

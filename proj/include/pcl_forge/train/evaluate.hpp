#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcl_forge/metrics/metrics.hpp"
#include "pcl_forge/synth/dataset.hpp"

namespace pclf::train {

struct EvalOptions {
  double image_threshold = 0.5;
  double pixel_threshold = 0.5;
};

struct MetricsReport {
  double ap50 = metrics::kNaN;
  double ap50_95 = metrics::kNaN;
  double image_auc = metrics::kNaN;
  double image_f1 = metrics::kNaN;
  double pixel_f1 = metrics::kNaN;
  double pcc_rpn = metrics::kNaN;
  double pcc_rcnn = metrics::kNaN;
  std::map<std::string, double> ap50_by_type;
  int images = 0;
  int tampered_images = 0;
};

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json by_type = nlohmann::json::object();
  for (const auto& [k, v] : r.ap50_by_type) by_type[k] = number_or_null(v);
  return {{"ap50", number_or_null(r.ap50)},
          {"ap50_95", number_or_null(r.ap50_95)},
          {"image_auc", number_or_null(r.image_auc)},
          {"image_f1", number_or_null(r.image_f1)},
          {"pixel_f1", number_or_null(r.pixel_f1)},
          {"pixel_f1_note", "pixel masks are rasterized from predicted boxes, not segmented"},
          {"pcc_rpn", number_or_null(r.pcc_rpn)},
          {"pcc_rcnn", number_or_null(r.pcc_rcnn)},
          {"ap50_by_type", by_type},
          {"images", r.images},
          {"tampered_images", r.tampered_images}};
}

inline double json_number(const nlohmann::json& j, const char* key) {
  return j.contains(key) && j.at(key).is_number() ? j.at(key).get<double>() : metrics::kNaN;
}

// Runs the model over `samples` and computes every report field. Image-level
// AUC/F1 need both pristine and tampered images and stay NaN otherwise.
template <typename Model>
MetricsReport evaluate(const Model& model, const std::vector<synth::Sample>& samples, const EvalOptions& opt = {},
                       metrics::ScoreAnalysis* analysis_out = nullptr) {
  MetricsReport rep;
  std::vector<synth::Image> images;
  for (const auto& s : samples) images.push_back(s.image);
  const auto results = model.infer(images);

  std::vector<metrics::ImageDetections> det;
  std::map<std::string, std::vector<metrics::ImageDetections>> by_type;
  std::vector<double> scores;
  std::vector<int> truth, predicted;
  std::vector<std::vector<detect::Proposal>> props;
  std::vector<std::vector<Box>> gts;
  double pixel_sum = 0;
  int pixel_n = 0;
  bool any_pristine = false, any_tampered = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& r = results[i];
    metrics::ImageDetections d{r.detections, s.boxes};
    det.push_back(d);
    const bool tampered = !s.boxes.empty();
    (tampered ? any_tampered : any_pristine) = true;
    if (tampered) by_type[std::string(synth::to_string(s.type))].push_back(d);
    const double sc = metrics::image_score(r.detections);
    scores.push_back(sc);
    truth.push_back(tampered ? 1 : 0);
    predicted.push_back(sc > opt.image_threshold ? 1 : 0);
    if (tampered) {
      ++rep.tampered_images;
      const auto pm = metrics::rasterize_boxes(r.detections, s.image.width, s.image.height, opt.pixel_threshold);
      pixel_sum += metrics::pixel_f1(pm, s.mask);
      ++pixel_n;
      props.push_back(r.proposals);
      gts.push_back(s.boxes);
    }
  }
  rep.images = static_cast<int>(samples.size());
  rep.ap50 = metrics::average_precision(det, 0.5);
  rep.ap50_95 = metrics::ap50_95(det);
  for (const auto& [k, v] : by_type) rep.ap50_by_type[k] = metrics::average_precision(v, 0.5);
  if (any_pristine && any_tampered) {
    rep.image_auc = metrics::roc_auc(scores, truth);
    rep.image_f1 = metrics::f1_binary(predicted, truth);
  }
  if (pixel_n > 0) rep.pixel_f1 = pixel_sum / pixel_n;
  auto analysis = metrics::score_iou_analysis(props, gts);
  rep.pcc_rpn = analysis.pcc_rpn;
  rep.pcc_rcnn = analysis.pcc_rcnn;
  if (analysis_out) *analysis_out = std::move(analysis);
  return rep;
}

inline std::vector<synth::Sample> load_split(const synth::Manifest& m, const std::string& split) {
  std::vector<synth::Sample> out;
  for (int i : m.indices(split)) out.push_back(synth::load_sample(m, i));
  return out;
}

}  // namespace pclf::train

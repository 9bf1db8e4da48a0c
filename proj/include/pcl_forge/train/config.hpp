#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/detect/config.hpp"
#include "pcl_forge/synth/dataset.hpp"

namespace pclf::train {

enum class ValueKind { integer, real, boolean, text, list };

struct KeyInfo {
  std::string key;
  ValueKind kind;
  std::string default_value;
  std::string help;
};

// Every recognised configuration key with its built-in default.
inline const std::vector<KeyInfo>& config_schema() {
  using K = ValueKind;
  static const std::vector<KeyInfo> schema = {
      {"experiment.name", K::text, "run", "artifact sub-directory name"},
      {"experiment.sweep_key", K::text, "", "config key varied by `sweep` (empty: single run)"},
      {"experiment.sweep_values", K::list, "[]", "values for sweep_key, e.g. [0.001, 0.005, 0.01, 0.05, 0.1]"},
      {"experiment.seeds", K::list, "[]", "train.seed values to repeat every sweep point with (empty: train.seed)"},

      {"data.manifest", K::text, "data/manifest.json", "dataset manifest, relative to the workdir"},
      {"data.size", K::integer, "64", "image side in pixels"},
      {"data.train", K::integer, "200", "training images"},
      {"data.test", K::integer, "50", "tampered test images"},
      {"data.test_pristine", K::integer, "0", "untouched test images (enables image-level AUC/F1)"},
      {"data.labeled_fraction", K::real, "1.0", "share of the training split carrying labels"},
      {"data.blur", K::boolean, "true", "Gaussian blur across the tamper boundary"},
      {"data.blur_sigma", K::real, "0.5", "boundary blur sigma"},
      {"data.area_min", K::real, "0.04", "minimum tampered area fraction"},
      {"data.area_max", K::real, "0.25", "maximum tampered area fraction"},
      {"data.noise_sigma_min", K::real, "0.01", "lower bound of per-image sensor noise"},
      {"data.noise_sigma_max", K::real, "0.04", "upper bound of per-image sensor noise"},
      {"data.regions", K::integer, "1", "tampered regions per image (splice and copy-move)"},
      {"data.types", K::list, "[splice, copy_move, removal]", "manipulation types, assigned round-robin"},
      {"data.seed", K::integer, "0", "global generation seed"},

      {"model.noise_view", K::text, "srm", "srm | constrained"},
      {"model.srm_truncation", K::real, "2.0", "residual clipping threshold T"},
      {"model.constrained_kernels", K::integer, "3", "constrained-conv output kernels K"},
      {"model.roi_dim", K::integer, "256", "RoI feature dimension d"},
      {"model.bilinear_dim", K::integer, "32", "per-stream reduction before bilinear pooling"},
      {"model.proj_hidden", K::integer, "256", "projection head hidden width"},
      {"model.proj_dim", K::integer, "128", "projection dimension p"},
      {"model.rpn_batch", K::integer, "128", "anchors sampled per image for the RPN loss"},
      {"model.rpn_positive_fraction", K::real, "0.5", "max positive share of sampled anchors"},
      {"model.rpn_positive_iou", K::real, "0.7", "anchor positive IoU"},
      {"model.rpn_negative_iou", K::real, "0.3", "anchor negative IoU"},
      {"model.proposals_train", K::integer, "32", "RPN proposals kept per image in training"},
      {"model.proposals_test", K::integer, "100", "RPN proposals kept per image in testing"},
      {"model.rpn_nms", K::real, "0.7", "proposal NMS IoU"},
      {"model.rcnn_batch", K::integer, "32", "RoIs sampled per labeled image"},
      {"model.rcnn_tampered_fraction", K::real, "0.25", "tampered share of sampled RoIs (1:3)"},
      {"model.score_threshold", K::real, "0.05", "detection score threshold"},
      {"model.detection_nms", K::real, "0.5", "detection NMS IoU"},

      {"loss.lambda1", K::real, "10", "RPN localization weight"},
      {"loss.lambda2", K::real, "1", "RCNN localization weight"},
      {"pcl.strategy", K::text, "pcl", "pcl | pcl_rgb | pcl_noise | pcl_fcl | off"},
      {"pcl.beta", K::text, "auto", "contrastive weight; auto = 0.01 (srm) or 0.05 (constrained)"},
      {"pcl.tau", K::real, "0.1", "temperature"},
      {"pcl.epsilon", K::real, "0.5", "IoU above which a labeled proposal is tampered"},
      {"pcl.delta", K::real, "0.5", "score above which an unlabeled proposal is tampered"},
      {"pcl.score_source", K::text, "rcnn", "unlabeled partition score: rcnn | rpn"},
      {"pcl.cross_image", K::boolean, "false", "pair proposals across images of a batch"},
      {"pcl.unlabeled", K::boolean, "true", "apply the contrastive loss to unlabeled images"},

      {"train.steps", K::integer, "2000", "optimizer steps"},
      {"train.lr", K::real, "1e-3", "initial learning rate"},
      {"train.lr_drop_step", K::integer, "1500", "step at which the learning rate drops"},
      {"train.lr_after_drop", K::real, "1e-4", "learning rate after the drop"},
      {"train.optimizer", K::text, "sgd", "sgd | adam"},
      {"train.momentum", K::real, "0.9", "SGD momentum"},
      {"train.weight_decay", K::real, "0", "L2 weight decay"},
      {"train.clip_norm", K::real, "0", "global gradient-norm clip (0: off)"},
      {"train.warmup", K::integer, "2000", "ramp length M of the unlabeled weight"},
      {"train.labeled_batch", K::integer, "1", "labeled images per step"},
      {"train.unlabeled_batch", K::integer, "1", "unlabeled images per step (semi-supervised)"},
      {"train.flip", K::boolean, "true", "random horizontal flip"},
      {"train.aug_noise", K::real, "0.005", "std of additive Gaussian noise augmentation"},
      {"train.seed", K::integer, "0", "initialization and data-order seed"},
      {"train.checkpoint_every", K::integer, "500", "checkpoint cadence in steps (0: final only)"},
      {"train.log", K::text, "train_log.jsonl", "training log file name"},

      {"eval.split", K::text, "test", "manifest split to evaluate"},
      {"eval.image_threshold", K::real, "0.5", "image-level decision threshold"},
      {"eval.pixel_threshold", K::real, "0.5", "box score threshold for pixel masks"},
  };
  return schema;
}

inline const KeyInfo* find_key(std::string_view key) {
  for (const auto& k : config_schema())
    if (k.key == key) return &k;
  return nullptr;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

// Strips a trailing # comment that is not inside quotes.
inline std::string strip_comment(std::string_view line) {
  bool quoted = false;
  char q = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == q) quoted = false;
    } else if (c == '"' || c == '\'') {
      quoted = true;
      q = c;
    } else if (c == '#') {
      return std::string(line.substr(0, i));
    }
  }
  return std::string(line);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::string body = trim(v);
  PCLF_REQUIRE(body.size() >= 2 && body.front() == '[' && body.back() == ']', InvalidArgument,
               "expected a [list], got " + v);
  body = body.substr(1, body.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("config " + key + ": expected a number, got '" + v + "'");
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidArgument("config " + key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument("config " + key + ": expected true/false, got '" + v + "'");
}

inline void validate(const KeyInfo& k, const std::string& v) {
  switch (k.kind) {
    case ValueKind::integer: parse_int(k.key, v); break;
    case ValueKind::real: parse_real(k.key, v); break;
    case ValueKind::boolean: parse_bool(k.key, v); break;
    case ValueKind::list: split_list(v); break;
    case ValueKind::text: break;
  }
}

}  // namespace detail

// Flat key = value configuration. Starts from the schema defaults; later
// layers (file, then command-line overrides) replace individual keys.
class Config {
 public:
  Config() {
    for (const auto& k : config_schema()) values_[k.key] = k.default_value;
  }

  void set(const std::string& key, const std::string& raw) {
    const KeyInfo* k = find_key(key);
    PCLF_REQUIRE(k != nullptr, InvalidArgument, "unknown config key: " + key);
    const std::string v = k->kind == ValueKind::list ? detail::trim(raw) : detail::unquote(detail::trim(raw));
    detail::validate(*k, v);
    values_[key] = v;
  }

  // "key=value" form used by command-line overrides.
  void set_assignment(std::string_view assignment) {
    const auto eq = assignment.find('=');
    PCLF_REQUIRE(eq != std::string_view::npos, InvalidArgument, "expected key=value, got " + std::string(assignment));
    set(detail::trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
  }

  // Parses TOML-style text: `key = value` lines, `# comments`, and optional
  // `[section]` headers that prefix the following keys.
  void merge_text(std::string_view text, const std::string& origin = "config") {
    std::stringstream ss{std::string(text)};
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const std::string body = detail::trim(detail::strip_comment(line));
      if (body.empty()) continue;
      if (body.front() == '[' && body.back() == ']' && body.find('=') == std::string::npos) {
        section = detail::trim(std::string_view(body).substr(1, body.size() - 2));
        continue;
      }
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw InvalidArgument(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = detail::trim(std::string_view(body).substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      try {
        set(key, body.substr(eq + 1));
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    merge_text(buf.str(), path.string());
  }

  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    PCLF_REQUIRE(it != values_.end(), InvalidArgument, "unknown config key: " + key);
    return it->second;
  }
  std::string text(const std::string& key) const { return raw(key); }
  double real(const std::string& key) const { return detail::parse_real(key, raw(key)); }
  long long integer(const std::string& key) const { return detail::parse_int(key, raw(key)); }
  bool boolean(const std::string& key) const { return detail::parse_bool(key, raw(key)); }
  std::vector<std::string> list(const std::string& key) const { return detail::split_list(raw(key)); }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical text form, one key per line in schema order; parses back to
  // the same configuration.
  std::string to_text() const {
    std::string out;
    for (const auto& k : config_schema()) {
      const std::string& v = values_.at(k.key);
      const bool quote = k.kind == ValueKind::text;
      out += k.key + " = " + (quote ? "\"" + v + "\"" : v) + "\n";
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  static Config from_json(const nlohmann::json& j) {
    Config c;
    for (const auto& [k, v] : j.items()) c.set(k, v.get<std::string>());
    return c;
  }

  // ---- typed views -------------------------------------------------------

  synth::DatasetConfig dataset() const {
    synth::DatasetConfig d;
    d.synth.size = static_cast<int>(integer("data.size"));
    d.synth.blur = boolean("data.blur");
    d.synth.blur_sigma = real("data.blur_sigma");
    d.synth.area_min = real("data.area_min");
    d.synth.area_max = real("data.area_max");
    d.synth.noise_sigma_min = real("data.noise_sigma_min");
    d.synth.noise_sigma_max = real("data.noise_sigma_max");
    d.synth.regions = static_cast<int>(integer("data.regions"));
    d.train = static_cast<int>(integer("data.train"));
    d.test = static_cast<int>(integer("data.test"));
    d.test_pristine = static_cast<int>(integer("data.test_pristine"));
    d.labeled_fraction = real("data.labeled_fraction");
    d.seed = static_cast<std::uint64_t>(integer("data.seed"));
    d.types.clear();
    for (const auto& t : list("data.types")) d.types.push_back(synth::manip_type_from_string(t));
    return d;
  }

  detect::ModelConfig model() const {
    detect::ModelConfig m;
    m.image_size = static_cast<int>(integer("data.size"));
    m.noise_view = detect::noise_view_from_string(text("model.noise_view"));
    m.srm_truncation = real("model.srm_truncation");
    m.constrained_kernels = static_cast<int>(integer("model.constrained_kernels"));
    m.roi_dim = static_cast<int>(integer("model.roi_dim"));
    m.bilinear_dim = static_cast<int>(integer("model.bilinear_dim"));
    m.proj_hidden = static_cast<int>(integer("model.proj_hidden"));
    m.proj_dim = static_cast<int>(integer("model.proj_dim"));
    m.rpn_batch = static_cast<int>(integer("model.rpn_batch"));
    m.rpn_positive_fraction = real("model.rpn_positive_fraction");
    m.rpn_positive_iou = real("model.rpn_positive_iou");
    m.rpn_negative_iou = real("model.rpn_negative_iou");
    m.proposals_train = static_cast<int>(integer("model.proposals_train"));
    m.proposals_test = static_cast<int>(integer("model.proposals_test"));
    m.rpn_nms = real("model.rpn_nms");
    m.rcnn_batch = static_cast<int>(integer("model.rcnn_batch"));
    m.rcnn_tampered_fraction = real("model.rcnn_tampered_fraction");
    m.score_threshold = real("model.score_threshold");
    m.detection_nms = real("model.detection_nms");
    m.seed = static_cast<std::uint64_t>(integer("train.seed"));
    return m;
  }

  double beta() const {
    const std::string b = text("pcl.beta");
    if (b == "auto") return detect::noise_view_from_string(text("model.noise_view")) == detect::NoiseView::constrained ? 0.05 : 0.01;
    const double v = detail::parse_real("pcl.beta", b);
    PCLF_REQUIRE(v >= 0, InvalidArgument, "pcl.beta must be >= 0");
    return v;
  }

  detect::LossConfig loss() const {
    detect::LossConfig l;
    l.lambda1 = real("loss.lambda1");
    l.lambda2 = real("loss.lambda2");
    l.beta = beta();
    l.tau = real("pcl.tau");
    l.epsilon = real("pcl.epsilon");
    l.delta = real("pcl.delta");
    l.strategy = pcl::strategy_from_string(text("pcl.strategy"));
    l.score_source = pcl::score_source_from_string(text("pcl.score_source"));
    l.cross_image = boolean("pcl.cross_image");
    PCLF_REQUIRE(l.tau > 0, InvalidArgument, "pcl.tau must be positive");
    PCLF_REQUIRE(l.epsilon > 0 && l.epsilon < 1 && l.delta > 0 && l.delta < 1, InvalidArgument,
                 "pcl.epsilon and pcl.delta must lie in (0,1)");
    return l;
  }

 private:
  std::map<std::string, std::string> values_;
};

// Text for --help: every key, its default and a one-line description.
inline std::string describe_schema() {
  std::size_t width = 0;
  for (const auto& k : config_schema()) width = std::max(width, k.key.size());
  std::string out = "Config keys (key = default  description):\n";
  for (const auto& k : config_schema()) {
    out += "  " + k.key + std::string(width - k.key.size(), ' ') + " = " + k.default_value;
    out += std::string(k.default_value.size() < 18 ? 18 - k.default_value.size() : 1, ' ') + k.help + "\n";
  }
  return out;
}

}  // namespace pclf::train

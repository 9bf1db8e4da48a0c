#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcl_forge/detect/model.hpp"
#include "pcl_forge/plot/plot.hpp"
#include "pcl_forge/synth/dataset.hpp"
#include "pcl_forge/train/checkpoint.hpp"
#include "pcl_forge/train/config.hpp"
#include "pcl_forge/train/evaluate.hpp"
#include "pcl_forge/train/trainer.hpp"

namespace pclf::train {

namespace fs = std::filesystem;

using Model = detect::Detector<float, true>;

inline fs::path resolve(const fs::path& workdir, const fs::path& p) { return p.is_absolute() ? p : workdir / p; }

// Loads the configured manifest, generating the dataset first if it is missing.
// An existing manifest built from different data.* settings is rejected.
inline synth::Manifest ensure_dataset(const Config& cfg, const fs::path& workdir) {
  const fs::path manifest = resolve(workdir, cfg.text("data.manifest"));
  if (fs::exists(manifest)) {
    auto m = synth::load_manifest(manifest);
    PCLF_REQUIRE(m.config.empty() || m.config == synth::to_json(cfg.dataset()), InvalidArgument,
                 manifest.string() + " was generated with different data.* settings; point data.manifest elsewhere");
    return m;
  }
  return synth::build_dataset(cfg.dataset(), manifest.parent_path());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  return nlohmann::json::parse(is);
}

inline std::vector<nlohmann::json> read_log(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

inline void write_scores_csv(const fs::path& path, const metrics::ScoreAnalysis& a) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(9);
  os << "iou,rpn_score,rcnn_score\n";
  for (const auto& p : a.points) os << p.iou << "," << p.rpn_score << "," << p.rcnn_score << "\n";
}

inline std::vector<metrics::ScorePoint> read_scores_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<metrics::ScorePoint> pts;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    metrics::ScorePoint p;
    char c1, c2;
    std::istringstream ss(line);
    if (ss >> p.iou >> c1 >> p.rpn_score >> c2 >> p.rcnn_score) pts.push_back(p);
  }
  return pts;
}

// Rebuilds a model from a checkpoint and the config snapshot inside it.
inline std::unique_ptr<Model> load_model(const fs::path& ckpt_path, Config* config_out = nullptr) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  const Config cfg = Config::from_json(ck.config);
  auto model = std::make_unique<Model>(cfg.model());
  load_params(ck, model->params());
  if (config_out) *config_out = cfg;
  return model;
}

struct RunResult {
  fs::path dir;
  MetricsReport report;
  std::vector<StepRecord> history;
};

// Loss-curve plot for one training log. Returns false (with no file) when the
// log is empty.
inline bool plot_loss_curve(const fs::path& log_path, const fs::path& png) {
  const auto rows = read_log(log_path);
  if (rows.empty()) return false;
  plot::Series total{"total", {}, {}}, pcl{"pcl_labeled", {}, {}}, unl{"pcl_unlabeled", {}, {}};
  for (const auto& r : rows) {
    const double s = r.at("step").get<double>();
    total.x.push_back(s);
    total.y.push_back(r.at("total").get<double>());
    pcl.x.push_back(s);
    pcl.y.push_back(r.at("pcl_labeled").get<double>());
    unl.x.push_back(s);
    unl.y.push_back(r.at("pcl_unlabeled").get<double>());
  }
  plot::line_plot(png, "training loss", {total, pcl, unl});
  return true;
}

// Trains one configuration into run_dir and evaluates it on eval.split.
template <typename M = Model>
RunResult train_and_evaluate(const Config& cfg, const fs::path& workdir, const fs::path& run_dir,
                             const fs::path& resume_from = {}, std::function<void(const StepRecord&)> on_step = {}) {
  const synth::Manifest manifest = ensure_dataset(cfg, workdir);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.toml", cfg.to_text());
  M model(cfg.model());
  Trainer<M> trainer(model, TrainOptions::from_config(cfg), cfg.loss(), TrainData::from_manifest(manifest), run_dir);
  trainer.set_config_snapshot(cfg.to_json());
  if (on_step) trainer.set_step_callback(std::move(on_step));
  if (!resume_from.empty()) trainer.resume(resume_from);
  trainer.run();

  RunResult res;
  res.dir = run_dir;
  res.history = trainer.history();
  metrics::ScoreAnalysis analysis;
  res.report = evaluate(model, load_split(manifest, cfg.text("eval.split")),
                        {cfg.real("eval.image_threshold"), cfg.real("eval.pixel_threshold")}, &analysis);
  write_json(run_dir / "report.json", to_json(res.report));
  write_scores_csv(run_dir / "scores.csv", analysis);
  plot_loss_curve(run_dir / cfg.text("train.log"), run_dir / "loss_curve.png");
  return res;
}

struct SweepPoint {
  std::string value;
  std::uint64_t seed = 0;
  RunResult result;
};

inline std::string sanitize(std::string s) {
  for (auto& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')) c = '_';
  return s;
}

// Full experiment: dataset, one run per (sweep value, seed), reports, summary
// and plots under workdir/<experiment.name>/.
inline std::vector<SweepPoint> run_experiment(const Config& cfg, const fs::path& workdir) {
  const fs::path root = workdir / sanitize(cfg.text("experiment.name"));
  fs::create_directories(root);
  write_text(root / "config.toml", cfg.to_text());
  const std::string key = cfg.text("experiment.sweep_key");
  std::vector<std::string> values = key.empty() ? std::vector<std::string>{""} : cfg.list("experiment.sweep_values");
  PCLF_REQUIRE(key.empty() || find_key(key) != nullptr, InvalidArgument, "unknown sweep key " + key);
  PCLF_REQUIRE(!values.empty(), InvalidArgument, "experiment.sweep_values is empty");
  std::vector<std::string> seeds = cfg.list("experiment.seeds");
  if (seeds.empty()) seeds.push_back(cfg.raw("train.seed"));

  std::vector<SweepPoint> points;
  nlohmann::json summary = {{"experiment", cfg.text("experiment.name")}, {"sweep_key", key}, {"runs", nlohmann::json::array()}};
  for (const auto& v : values)
    for (const auto& s : seeds) {
      Config c = cfg;
      if (!key.empty()) c.set(key, v);
      c.set("train.seed", s);
      fs::path dir = root;
      if (!key.empty()) dir /= sanitize(key + "=" + v);
      if (seeds.size() > 1) dir /= "seed_" + sanitize(s);
      SweepPoint p{v, static_cast<std::uint64_t>(c.integer("train.seed")), train_and_evaluate(c, workdir, dir)};
      summary["runs"].push_back({{"value", v}, {"seed", p.seed}, {"dir", fs::relative(dir, root).string()},
                                 {"report", to_json(p.result.report)}});
      points.push_back(std::move(p));
    }
  write_json(root / "summary.json", summary);
  return points;
}

// Emits every plot derivable from artifacts under `dir`: loss curves for each
// training log, a sweep plot for each summary.json and a scatter for each
// scores.csv. Returns the number of files written.
inline int emit_plots(const fs::path& dir, std::ostream& warn) {
  int written = 0;
  if (!fs::exists(dir)) {
    warn << "plot: " << dir << " does not exist\n";
    return 0;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto name = f.filename().string();
    if (f.extension() == ".jsonl") {
      if (plot_loss_curve(f, f.parent_path() / "loss_curve.png")) ++written;
      else warn << "plot: empty log " << f << ", skipped\n";
    } else if (name == "scores.csv") {
      const auto pts = read_scores_csv(f);
      if (pts.empty()) {
        warn << "plot: no score points in " << f << ", skipped\n";
        continue;
      }
      plot::score_scatter(f.parent_path() / "score_scatter.png", pts);
      ++written;
    } else if (name == "summary.json") {
      const auto s = read_json(f);
      if (s.at("sweep_key").get<std::string>().empty()) continue;
      // Mean AP50 per sweep value (over seeds).
      std::map<double, std::pair<double, int>> acc;
      for (const auto& r : s.at("runs")) {
        const double v = std::stod(r.at("value").get<std::string>());
        const double ap = json_number(r.at("report"), "ap50");
        if (!std::isfinite(ap)) continue;
        acc[v].first += ap;
        acc[v].second += 1;
      }
      if (acc.empty()) continue;
      plot::Series ser{"ap50", {}, {}};
      bool positive = true;
      for (const auto& [v, sa] : acc) {
        ser.x.push_back(v);
        ser.y.push_back(sa.first / sa.second);
        positive = positive && v > 0;
      }
      plot::line_plot(f.parent_path() / "sweep_ap50.png", "AP50 vs " + s.at("sweep_key").get<std::string>(), {ser},
                      positive);
      ++written;
    }
  }
  return written;
}

}  // namespace pclf::train

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/rng.hpp"
#include "pcl_forge/detect/model.hpp"
#include "pcl_forge/noise/constrained.hpp"
#include "pcl_forge/synth/dataset.hpp"
#include "pcl_forge/synth/pnm.hpp"
#include "pcl_forge/train/checkpoint.hpp"
#include "pcl_forge/train/config.hpp"
#include "pcl_forge/train/losses.hpp"
#include "pcl_forge/train/optimizer.hpp"

namespace pclf::train {

struct TrainOptions {
  long long steps = 2000;
  LrSchedule lr;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double clip_norm = 0.0;
  double warmup = 2000;
  int labeled_batch = 1;
  int unlabeled_batch = 1;
  bool use_unlabeled = true;
  bool flip = true;
  double aug_noise = 0.005;
  std::uint64_t seed = 0;
  long long checkpoint_every = 500;
  std::string log_name = "train_log.jsonl";

  static TrainOptions from_config(const Config& c) {
    TrainOptions o;
    o.steps = c.integer("train.steps");
    o.lr = {c.real("train.lr"), c.integer("train.lr_drop_step"), c.real("train.lr_after_drop")};
    o.optimizer = parse_optimizer(c.text("train.optimizer"));
    o.momentum = c.real("train.momentum");
    o.weight_decay = c.real("train.weight_decay");
    o.clip_norm = c.real("train.clip_norm");
    o.warmup = static_cast<double>(c.integer("train.warmup"));
    o.labeled_batch = static_cast<int>(c.integer("train.labeled_batch"));
    o.unlabeled_batch = static_cast<int>(c.integer("train.unlabeled_batch"));
    o.use_unlabeled = c.boolean("pcl.unlabeled");
    o.flip = c.boolean("train.flip");
    o.aug_noise = c.real("train.aug_noise");
    o.seed = static_cast<std::uint64_t>(c.integer("train.seed"));
    o.checkpoint_every = c.integer("train.checkpoint_every");
    o.log_name = c.text("train.log");
    PCLF_REQUIRE(o.steps >= 0 && o.labeled_batch >= 1 && o.unlabeled_batch >= 0, InvalidArgument,
                 "train.steps/labeled_batch/unlabeled_batch out of range");
    PCLF_REQUIRE(o.warmup >= 1, InvalidArgument, "train.warmup must be >= 1");
    return o;
  }
};

// Training split of a manifest, divided by the labeled flag.
struct TrainData {
  std::vector<synth::Sample> labeled;
  std::vector<synth::Sample> unlabeled;

  static TrainData from_manifest(const synth::Manifest& m) {
    TrainData d;
    for (int i : m.indices("train")) {
      auto s = synth::load_sample(m, i);
      (s.labeled ? d.labeled : d.unlabeled).push_back(std::move(s));
    }
    return d;
  }
};

struct StepRecord {
  long long step = 0;
  double lr = 0;
  LossBreakdown loss;
  double grad_norm = 0;
  int projection_resets = 0;
  double constraint_violation = 0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step},
                      {"lr", r.lr},
                      {"omega", r.loss.omega},
                      {"rpn_cls", r.loss.rpn_cls},
                      {"rpn_loc", r.loss.rpn_loc},
                      {"rcnn_cls", r.loss.rcnn_cls},
                      {"rcnn_loc", r.loss.rcnn_loc},
                      {"pcl_labeled", r.loss.pcl_labeled},
                      {"pcl_unlabeled", r.loss.pcl_unlabeled},
                      {"lambda1", r.loss.lambda1},
                      {"lambda2", r.loss.lambda2},
                      {"beta", r.loss.beta},
                      {"total", r.loss.total},
                      {"grad_norm", r.grad_norm}};
  if (r.projection_resets) j["projection_resets"] = r.projection_resets;
  return j;
}

// Element `k` of the data stream: epoch-wise permutations keyed on (seed, epoch)
// so that the batch of any step depends only on (seed, step).
inline int stream_index(std::uint64_t seed, std::uint64_t tag, long long position, int pool) {
  const long long epoch = position / pool;
  std::vector<int> perm(static_cast<std::size_t>(pool));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(hash_seed(seed, tag, static_cast<std::uint64_t>(epoch)));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm[static_cast<std::size_t>(position % pool)];
}

inline detect::GroupSample augment(const synth::Sample& s, bool flip, double noise_sigma, Rng& rng) {
  detect::GroupSample g{s.image, s.labeled ? s.boxes : std::vector<Box>{}};
  if (flip && uniform(rng, 0.0, 1.0) < 0.5) {
    synth::Image f(s.image.height, s.image.width);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x)
        for (int c = 0; c < 3; ++c) f.at(y, x, c) = s.image.at(y, f.width - 1 - x, c);
    g.image = std::move(f);
    for (auto& b : g.gt) b = flip_box_horizontal(b, g.image.width);
  }
  if (noise_sigma > 0)
    for (auto& v : g.image.pixels) v = std::clamp(v + normal(rng, 0.0, noise_sigma), 0.0, 1.0);
  return g;
}

template <typename Model>
class Trainer {
 public:
  using T = typename Model::Scalar;

  Trainer(Model& model, TrainOptions opt, detect::LossConfig loss, TrainData data, std::filesystem::path out_dir)
      : model_(model),
        opt_(std::move(opt)),
        loss_(loss),
        data_(std::move(data)),
        out_dir_(std::move(out_dir)),
        sgd_(opt_.optimizer, opt_.momentum, opt_.weight_decay, opt_.clip_norm) {
    PCLF_REQUIRE(!data_.labeled.empty(), InvalidArgument, "training needs at least one labeled image");
  }

  void set_config_snapshot(nlohmann::json j) { config_snapshot_ = std::move(j); }
  void set_step_callback(std::function<void(const StepRecord&)> cb) { callback_ = std::move(cb); }

  long long next_step() const { return next_step_; }
  Optimizer<T>& optimizer() { return sgd_; }
  const std::vector<StepRecord>& history() const { return history_; }

  bool semi_supervised() const {
    return opt_.use_unlabeled && Model::kHasPcl && loss_.strategy != pcl::Strategy::off && !data_.unlabeled.empty() &&
           opt_.unlabeled_batch > 0;
  }

  // Batch for step m: labeled images first stream, unlabeled second.
  void batch_for(long long m, std::vector<detect::GroupSample>& labeled, std::vector<detect::GroupSample>& unlabeled) const {
    labeled.clear();
    unlabeled.clear();
    Rng aug(hash_seed(opt_.seed, static_cast<std::uint64_t>(m), 0xa06ULL));
    const int nl = static_cast<int>(data_.labeled.size());
    for (int k = 0; k < opt_.labeled_batch; ++k) {
      const int idx = stream_index(opt_.seed, 0x1ab, m * opt_.labeled_batch + k, nl);
      labeled.push_back(augment(data_.labeled[static_cast<std::size_t>(idx)], opt_.flip, opt_.aug_noise, aug));
    }
    if (!semi_supervised()) return;
    const int nu = static_cast<int>(data_.unlabeled.size());
    for (int k = 0; k < opt_.unlabeled_batch; ++k) {
      const int idx = stream_index(opt_.seed, 0x0b1, m * opt_.unlabeled_batch + k, nu);
      unlabeled.push_back(augment(data_.unlabeled[static_cast<std::size_t>(idx)], opt_.flip, opt_.aug_noise, aug));
    }
  }

  StepRecord step() {
    const long long m = next_step_;
    std::vector<detect::GroupSample> labeled, unlabeled;
    batch_for(m, labeled, unlabeled);
    detect::LossConfig lc = loss_;
    lc.omega = ramp_weight(static_cast<double>(m), opt_.warmup);
    Rng rng(hash_seed(opt_.seed, static_cast<std::uint64_t>(m), 0x5a3ULL));
    detect::StepPlan plan;
    model_.params().zero_grad();
    StepRecord rec;
    rec.step = m;
    rec.lr = opt_.lr.at(m);
    rec.loss = model_.compute_loss(labeled, unlabeled, lc, rng, plan, true);
    if (!std::isfinite(rec.loss.total) || !grads_finite()) {
      dump_diagnostics(m, labeled, unlabeled, rec);
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(m) + "; batch dumped under " +
                          (out_dir_ / ("nonfinite_step_" + std::to_string(m))).string());
    }
    rec.grad_norm = sgd_.step(model_.params(), rec.lr);
    if (auto* w = model_.constrained_weights()) {
      rec.projection_resets = noise::project_constrained(w->value).resets;
      rec.constraint_violation = noise::constraint_violation(w->value);
    }
    ++next_step_;
    return rec;
  }

  // Runs until opts.steps, logging every step and checkpointing at the cadence.
  void run() {
    std::filesystem::create_directories(out_dir_);
    const auto log_path = out_dir_ / opt_.log_name;
    std::ofstream log(log_path, next_step_ == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot open training log " + log_path.string());
    while (next_step_ < opt_.steps) {
      StepRecord rec = step();
      log << to_json(rec).dump() << "\n";
      log.flush();
      history_.push_back(rec);
      if (callback_) callback_(rec);
      if (opt_.checkpoint_every > 0 && next_step_ % opt_.checkpoint_every == 0 && next_step_ < opt_.steps)
        save(checkpoint_path(next_step_));
    }
    save(out_dir_ / "final.ckpt");
  }

  std::filesystem::path checkpoint_path(long long step) const {
    char name[32];
    std::snprintf(name, sizeof name, "step_%06lld.ckpt", step);
    return out_dir_ / name;
  }

  void save(const std::filesystem::path& path) const {
    Checkpoint ck;
    ck.step = next_step_;
    ck.config = config_snapshot_;
    store_params(ck, model_.params());
    store_momentum(ck, sgd_.state());
    write_checkpoint(path, ck);
  }

  void resume(const std::filesystem::path& path) {
    const Checkpoint ck = read_checkpoint(path);
    load_params(ck, model_.params());
    load_momentum(ck, sgd_.state());
    next_step_ = ck.step;
  }

 private:
  bool grads_finite() const {
    for (const auto& p : model_.params())
      for (T g : p->grad.values())
        if (!std::isfinite(static_cast<double>(g))) return false;
    return true;
  }

  void dump_diagnostics(long long m, const std::vector<detect::GroupSample>& labeled,
                        const std::vector<detect::GroupSample>& unlabeled, const StepRecord& rec) const {
    const auto dir = out_dir_ / ("nonfinite_step_" + std::to_string(m));
    std::filesystem::create_directories(dir);
    nlohmann::json j = to_json(rec);
    nlohmann::json boxes = nlohmann::json::array();
    int k = 0;
    for (const auto* group : {&labeled, &unlabeled})
      for (const auto& g : *group) {
        const std::string name = (group == &labeled ? "labeled_" : "unlabeled_") + std::to_string(k++) + ".ppm";
        synth::write_ppm(dir / name, g.image);
        nlohmann::json b = nlohmann::json::array();
        for (const auto& box : g.gt) b.push_back({box.x1, box.y1, box.x2, box.y2});
        boxes.push_back({{"image", name}, {"boxes", b}});
      }
    j["batch"] = boxes;
    nlohmann::json bad = nlohmann::json::array();
    for (const auto& p : model_.params()) {
      bool finite = true;
      for (T v : p->value.values()) finite = finite && std::isfinite(static_cast<double>(v));
      for (T v : p->grad.values()) finite = finite && std::isfinite(static_cast<double>(v));
      if (!finite) bad.push_back(p->name);
    }
    j["nonfinite_params"] = bad;
    std::ofstream(dir / "diagnostic.json") << j.dump(1) << "\n";
  }

  Model& model_;
  TrainOptions opt_;
  detect::LossConfig loss_;
  TrainData data_;
  std::filesystem::path out_dir_;
  Optimizer<T> sgd_;
  nlohmann::json config_snapshot_ = nlohmann::json::object();
  std::function<void(const StepRecord&)> callback_;
  std::vector<StepRecord> history_;
  long long next_step_ = 0;
};

}  // namespace pclf::train

// Acceptance suite: one PASS/FAIL line per criterion. The exit status only
// reports crashes; criterion outcomes are the printed lines (and
// acceptance.json in the work directory).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <sys/wait.h>

#include "oracles.hpp"

using namespace pclf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  fs::path workdir;
  long long toy_steps = 2000;
  long long directional_steps = 2000;
  std::vector<std::string> only;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- loss fidelity --------------------------------------------------------

Outcome loss_fidelity(const Settings&) {
  const auto t0 = std::chrono::steady_clock::now();
  oracle::Gen g(1001);
  const double taus[] = {0.05, 0.1, 0.5};
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = g.integer(1, 24), dim = g.integer(2, 32);
    std::vector<std::vector<double>> zr, zn;
    for (int i = 0; i < n; ++i) zr.push_back(g.vec(dim)), zn.push_back(g.vec(dim));
    pcl::Partition part;
    const double share = g.real(0.05, 0.95);
    for (int i = 0; i < n; ++i) (g.coin(share) ? part.tampered : part.authentic).push_back(i);
    const double tau = taus[t % 3];
    Tensor<double> tr({n, dim}), tn({n, dim});
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < dim; ++k) tr.at(i, k) = zr[std::size_t(i)][std::size_t(k)], tn.at(i, k) = zn[std::size_t(i)][std::size_t(k)];
    const double got = pcl::pcl_loss(tr, tn, pcl::build_pairs(part, pcl::Strategy::pcl), tau);
    const double want = oracle::contrastive_loss(zr, zn, part.tampered, part.authentic, tau);
    worst = std::max(worst, std::abs(got - want));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 10,
          "max |err| = " + fmt("%.2e", worst) + " over 200 configs, " + fmt("%.2f", secs) + " s (limits 1e-6, 10 s)"};
}

// ---- gradient integrity ----------------------------------------------------

Outcome gradient_integrity(const Settings&) {
  const auto t0 = std::chrono::steady_clock::now();
  detect::ModelConfig mc;
  mc.seed = 11;
  detect::Detector<double> model(mc);
  std::vector<detect::GroupSample> batch;
  for (std::uint64_t i = 0; i < 2; ++i) {
    const auto r = synth::apply_splice(synth::generate_base_image(700 + 2 * i, 64), synth::generate_base_image(701 + 2 * i, 64),
                                       800 + i);
    batch.push_back({r.image, r.boxes});
  }
  const std::vector<detect::GroupSample> both = batch, first{batch[0]};
  const std::vector<detect::GroupSample> second_unlabeled{{batch[1].image, {}}};

  detect::LossConfig lc;
  lc.beta = 1.0;
  lc.omega = 1.0;
  lc.delta = 0.45;
  struct Objective {
    std::string name;
    std::span<const detect::GroupSample> labeled, unlabeled;
    detect::StepPlan plan;
    std::vector<std::pair<nn::Param<double>*, std::vector<double>>> grads;
    int positives = 0;
  };
  Objective objs[2] = {{"L^l", both, {}, {}, {}, 0}, {"L^lu", first, second_unlabeled, {}, {}, 0}};
  Rng rng(5);
  for (auto& o : objs) {
    model.params().zero_grad();
    model.compute_loss(o.labeled, o.unlabeled, lc, rng, o.plan, true);
    o.positives = model.last_labeled_group().pcl_positives + model.last_unlabeled_group().pcl_positives;
    for (const auto& p : model.params())
      if (p->trainable) o.grads.push_back({p.get(), {p->grad.values().begin(), p->grad.values().end()}});
  }

  oracle::Gen g(1002);
  const std::size_t tensors = objs[0].grads.size();
  double worst = 0;
  std::string worst_name;
  const double h = 1e-6;
  for (int t = 0; t < 100; ++t) {
    const std::size_t pi = std::size_t(g.integer(0, int(tensors) - 1));
    auto* p = objs[0].grads[pi].first;
    const std::size_t i = std::size_t(g.integer(0, int(p->value.size()) - 1));
    const double v = p->value[i];
    for (auto& o : objs) {
      p->value[i] = v + h;
      const double lp = model.compute_loss(o.labeled, o.unlabeled, lc, rng, o.plan, false).total;
      p->value[i] = v - h;
      const double lm = model.compute_loss(o.labeled, o.unlabeled, lc, rng, o.plan, false).total;
      p->value[i] = v;
      const double fd = (lp - lm) / (2 * h), an = o.grads[pi].second[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = o.name + " " + p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 120 && objs[0].positives > 0 && objs[1].positives > 0,
          "max rel err = " + fmt("%.2e", worst) + " (" + worst_name + "), contrastive positives " +
              std::to_string(objs[0].positives) + "/" + std::to_string(objs[1].positives) + ", " + fmt("%.1f", secs) +
              " s (limits 1e-3, 120 s)"};
}

// ---- training helpers --------------------------------------------------------

train::Config base_config(const std::string& manifest, bool blur) {
  train::Config c;
  c.set("data.manifest", manifest);
  c.set("data.blur", blur ? "true" : "false");
  c.set("train.optimizer", "adam");
  c.set("train.labeled_batch", "4");
  c.set("train.checkpoint_every", "0");
  return c;
}

void set_steps(train::Config& c, long long steps) {
  c.set("train.steps", std::to_string(steps));
  c.set("train.lr_drop_step", std::to_string(steps * 3 / 4));
  c.set("train.warmup", std::to_string(std::max<long long>(1, steps)));
}

// ---- ablation identity -------------------------------------------------------

Outcome ablation_identity(const Settings& s) {
  train::Config c = base_config("ablation/manifest.json", true);
  c.set("data.train", "20");
  c.set("data.test", "4");
  c.set("pcl.strategy", "off");
  c.set("train.steps", "50");
  c.set("train.labeled_batch", "1");
  const auto manifest = train::ensure_dataset(c, s.workdir);
  auto run = [&](auto& model, const fs::path& out) {
    train::Trainer<std::remove_reference_t<decltype(model)>> t(model, train::TrainOptions::from_config(c), c.loss(),
                                                               train::TrainData::from_manifest(manifest), out);
    t.run();
    return t.history();
  };
  detect::Detector<float, true> with(c.model());
  detect::Detector<float, false> without(c.model());
  const auto a = run(with, s.workdir / "ablation" / "with_head");
  const auto b = run(without, s.workdir / "ablation" / "without_head");
  double worst = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    const auto &x = a[i].loss, &y = b[i].loss;
    for (auto [u, v] : {std::pair{x.total, y.total}, {x.rpn_cls, y.rpn_cls}, {x.rpn_loc, y.rpn_loc},
                        {x.rcnn_cls, y.rcnn_cls}, {x.rcnn_loc, y.rcnn_loc}})
      worst = std::max(worst, std::abs(u - v));
  }
  const bool ok = a.size() == 50 && b.size() == 50 && worst <= 1e-6;
  return {ok, "max per-step loss difference " + fmt("%.2e", worst) + " over " + std::to_string(a.size()) +
                  " steps (limit 1e-6)"};
}

// ---- ramp --------------------------------------------------------------------

Outcome ramp_schedule(const Settings&) {
  const double M = 2000;
  const double w0 = train::ramp_weight(0, M), wm = train::ramp_weight(M, M);
  oracle::Gen g(1003);
  std::vector<double> ms(1000);
  for (auto& m : ms) m = g.real(0, 2 * M);
  std::sort(ms.begin(), ms.end());
  bool monotone = true;
  for (std::size_t i = 1; i < ms.size(); ++i) monotone &= train::ramp_weight(ms[i], M) >= train::ramp_weight(ms[i - 1], M);
  const bool ok = std::abs(w0 - std::exp(-5.0)) <= 1e-9 && wm == 1.0 && monotone;
  return {ok, "w(0) - e^-5 = " + fmt("%.1e", w0 - std::exp(-5.0)) + ", w(M) = " + fmt("%.17g", wm) +
                  (monotone ? ", monotone" : ", NOT monotone") + " over 1000 sampled m"};
}

// ---- constraint projection -------------------------------------------------

Outcome constraint_projection(const Settings& s) {
  train::Config c = base_config("ablation/manifest.json", true);
  c.set("data.train", "20");
  c.set("data.test", "4");
  c.set("model.noise_view", "constrained");
  c.set("train.steps", "200");
  c.set("train.labeled_batch", "1");
  c.set("train.optimizer", "sgd");
  c.set("train.lr", "0.01");
  const auto manifest = train::ensure_dataset(c, s.workdir);
  train::Model model(c.model());
  train::Trainer<train::Model> t(model, train::TrainOptions::from_config(c), c.loss(),
                                 train::TrainData::from_manifest(manifest), s.workdir / "constraint");
  double worst = 0;
  long long checked = 0;
  t.set_step_callback([&](const train::StepRecord&) {
    const auto& w = model.constrained_weights()->value;
    for (int k = 0; k < w.dim(0); ++k)
      for (int ch = 0; ch < w.dim(1); ++ch) {
        double rest = 0;
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 5; ++x)
            if (y != 2 || x != 2) rest += w.at(k, ch, y, x);
        worst = std::max({worst, std::abs(double(w.at(k, ch, 2, 2)) + 1.0), std::abs(rest - 1.0)});
      }
    ++checked;
  });
  t.run();
  return {checked == 200 && worst <= 1e-6,
          "max deviation " + fmt("%.2e", worst) + " after each of " + std::to_string(checked) + " steps (limit 1e-6)"};
}

// ---- noise views -------------------------------------------------------------

Outcome noise_views(const Settings&) {
  oracle::Gen g(1004);
  double worst = 0;
  bool zero = true;
  for (int t = 0; t < 50; ++t) {
    const auto img = oracle::random_image(g, 8, 8);
    for (double trunc : {std::numeric_limits<double>::infinity(), 2.0}) {
      const auto got = noise::srm_residual(img, trunc);
      const auto want = oracle::srm_residual(img, trunc);
      for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    Tensor<double> x({1, 3, 8, 8}), w({3, 3, 5, 5});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) x.at(0, c, y, xx) = img.at(y, xx, c);
    for (auto& v : w.values()) v = g.gauss();
    noise::project_constrained(w);
    const auto out = noise::constrained_forward(x, w);
    for (int k = 0; k < 3; ++k)
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) {
          double acc = 0;
          for (int c = 0; c < 3; ++c) {
            std::vector<double> plane(64), kernel(25);
            for (int i = 0; i < 64; ++i) plane[std::size_t(i)] = x.at(0, c, i / 8, i % 8);
            for (int i = 0; i < 25; ++i) kernel[std::size_t(i)] = w.at(k, c, i / 5, i % 5);
            acc += oracle::correlate_at(plane, 8, 8, y, xx, kernel);
          }
          worst = std::max(worst, std::abs(out.at(0, k, y, xx) - acc));
        }
  }
  for (int t = 0; t < 100; ++t) {
    const double v = g.real(0, 1);
    const synth::Image flat(8, 8, v);
    for (double r : noise::srm_residual(flat, 2.0).values()) zero &= r == 0.0;
    Tensor<double> x({1, 3, 8, 8}, v), w({3, 3, 5, 5});
    for (auto& q : w.values()) q = g.gauss();
    noise::project_constrained(w);
    for (double r : noise::constrained_forward(x, w).values()) zero &= r == 0.0;
  }
  return {worst <= 1e-6 && zero, "max |err| vs naive correlation " + fmt("%.2e", worst) +
                                     (zero ? ", 100 constant images map to exactly 0" : ", constant image NOT annihilated")};
}

// ---- metrics -----------------------------------------------------------------

std::vector<metrics::ImageDetections> random_detections(oracle::Gen& g) {
  std::vector<metrics::ImageDetections> out(std::size_t(g.integer(1, 4)));
  for (auto& im : out) {
    const int ng = g.integer(0, 3);
    for (int k = 0; k < ng; ++k) im.gt.push_back(g.int_box(16));
    const int nd = g.integer(0, 6);
    for (int k = 0; k < nd; ++k) {
      Box b = g.int_box(16);
      if (!im.gt.empty() && g.coin(0.6)) {
        const Box& t = im.gt[std::size_t(g.integer(0, ng - 1))];
        b = {std::max(0.0, t.x1 + g.integer(-1, 1)), std::max(0.0, t.y1 + g.integer(-1, 1)), t.x2 + g.integer(0, 1),
             t.y2 + g.integer(0, 1)};
        if (!b.valid()) b = t;
      }
      im.detections.push_back({b, g.coin(0.3) ? 0.5 : g.real(0, 1)});
    }
  }
  return out;
}

bool same(double a, double b, double tol) { return (std::isnan(a) && std::isnan(b)) || std::abs(a - b) <= tol; }

Outcome metrics_oracles(const Settings&) {
  oracle::Gen g(1005);
  const int n = 50;
  int ok_iou = 0, ok_ap = 0, ok_ap95 = 0, ok_auc = 0, ok_f1 = 0, ok_pcc = 0;
  for (int t = 0; t < n; ++t) {
    const Box a = g.int_box(20), b = g.int_box(20);
    ok_iou += same(metrics::iou(a, b), oracle::iou_cells(a, b), 1e-9);

    const auto inst = random_detections(g);
    ok_ap += same(metrics::average_precision(inst, 0.5), oracle::average_precision(inst, 0.5), 1e-9);
    double sum = 0;
    for (double thr : metrics::coco_thresholds()) sum += oracle::average_precision(inst, thr);
    ok_ap95 += same(metrics::ap50_95(inst), sum / 10, 1e-9);

    const int m = g.integer(2, 30);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < m; ++i) {
      scores.push_back(g.coin(0.3) ? 0.5 : g.real(0, 1));
      labels.push_back(i == 0 ? 0 : i == 1 ? 1 : int(g.coin()));
    }
    ok_auc += same(metrics::roc_auc(scores, labels), oracle::auc_pairs(scores, labels), 1e-9);

    std::vector<int> pred, truth;
    for (int i = 0; i < m; ++i) pred.push_back(int(g.coin())), truth.push_back(int(g.coin()));
    ok_f1 += metrics::f1_binary(pred, truth) == oracle::f1_counts(pred, truth);

    std::vector<double> x(static_cast<std::size_t>(m)), y(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) x[std::size_t(i)] = g.gauss(), y[std::size_t(i)] = 0.5 * x[std::size_t(i)] + g.gauss();
    ok_pcc += same(metrics::pearson_cc(x, y), oracle::pearson(x, y), 1e-9);
  }
  const bool ok = ok_iou == n && ok_ap == n && ok_ap95 == n && ok_auc == n && ok_f1 == n && ok_pcc == n;
  std::ostringstream d;
  d << "agreeing instances of " << n << ": IoU " << ok_iou << ", AP50 " << ok_ap << ", AP50-95 " << ok_ap95 << ", AUC "
    << ok_auc << ", F1 " << ok_f1 << " (exact), PCC " << ok_pcc;
  return {ok, d.str()};
}

// ---- toy learning ------------------------------------------------------------

Outcome toy_learning(const Settings& s) {
  train::Config c = base_config("easy/manifest.json", false);
  c.set("pcl.strategy", "off");
  set_steps(c, s.toy_steps);
  const std::clock_t c0 = std::clock();
  const auto res = train::train_and_evaluate(c, s.workdir, s.workdir / "toy");
  const double cpu = double(std::clock() - c0) / CLOCKS_PER_SEC;
  const double ap = res.report.ap50;
  return {ap >= 0.60 && cpu < 900 && s.toy_steps <= 2000,
          "AP50 = " + fmt("%.3f", ap) + " after " + std::to_string(s.toy_steps) + " steps, " + fmt("%.0f", cpu) +
              " s CPU (limits 0.60, 2000 steps, 900 s)"};
}

// ---- directional checks ------------------------------------------------------

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

Outcome directional_pcl(const Settings& s) {
  std::vector<double> ap_off, ap_pcl;
  double worst_ratio = 0;
  for (int seed = 0; seed < 3; ++seed)
    for (const std::string strategy : {"off", "pcl"}) {
      train::Config c = base_config("hard/manifest.json", true);
      c.set("pcl.strategy", strategy);
      c.set("train.seed", std::to_string(seed));
      set_steps(c, s.directional_steps);
      const auto res = train::train_and_evaluate(
          c, s.workdir, s.workdir / "directional" / (strategy + "_seed" + std::to_string(seed)));
      (strategy == "off" ? ap_off : ap_pcl).push_back(res.report.ap50);
      if (strategy == "pcl") {
        const auto& h = res.history;
        const double at10 = h.at(10).loss.pcl_labeled;
        double tail = 0;
        const std::size_t k = std::min<std::size_t>(50, h.size());
        for (std::size_t i = h.size() - k; i < h.size(); ++i) tail += h[i].loss.pcl_labeled;
        worst_ratio = std::max(worst_ratio, (tail / double(k)) / at10);
      }
    }
  const double off = mean(ap_off), with = mean(ap_pcl);
  const bool ok = with >= off - 0.01 && worst_ratio <= 0.5;
  return {ok, "mean AP50 pcl " + fmt("%.3f", with) + " vs off " + fmt("%.3f", off) +
                  " (need pcl >= off - 0.010); last-50-step mean / step-10 contrastive loss, worst seed " + fmt("%.3f", worst_ratio) +
                  " (need <= 0.5); " + std::to_string(s.directional_steps) + " steps"};
}

Outcome directional_semi(const Settings& s) {
  std::vector<double> ap_unl, ap_lab, pcc_rpn, pcc_rcnn;
  for (int seed = 0; seed < 3; ++seed)
    for (const bool unlabeled : {false, true}) {
      train::Config c = base_config("semi/manifest.json", true);
      c.set("data.labeled_fraction", "0.25");
      c.set("pcl.strategy", "pcl");
      c.set("pcl.unlabeled", unlabeled ? "true" : "false");
      c.set("pcl.score_source", "rcnn");
      c.set("train.unlabeled_batch", "4");
      c.set("train.seed", std::to_string(seed));
      set_steps(c, s.directional_steps);
      const auto res = train::train_and_evaluate(
          c, s.workdir, s.workdir / "semi" / ((unlabeled ? "unlabeled_seed" : "labeled_only_seed") + std::to_string(seed)));
      (unlabeled ? ap_unl : ap_lab).push_back(res.report.ap50);
      if (unlabeled) {
        pcc_rpn.push_back(res.report.pcc_rpn);
        pcc_rcnn.push_back(res.report.pcc_rcnn);
      }
    }
  const double u = mean(ap_unl), l = mean(ap_lab), pr = mean(pcc_rpn), pc = mean(pcc_rcnn);
  const bool ok = u >= l - 0.01 && pc > pr;
  return {ok, "mean AP50 unlabeled-PCL " + fmt("%.3f", u) + " vs labeled-only " + fmt("%.3f", l) +
                  " (need unlabeled >= labeled-only - 0.010); mean pcc_rcnn " + fmt("%.3f", pc) + " vs pcc_rpn " + fmt("%.3f", pr) + " (need rcnn > rpn); " +
                  std::to_string(s.directional_steps) + " steps"};
}

// ---- determinism -------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome determinism(const Settings& s) {
  const fs::path root = s.workdir / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "run.toml") << "[experiment]\nname = \"det\"\n[data]\ntrain = 20\ntest = 4\n"
                                         "labeled_fraction = 0.5\n[train]\nsteps = 30\nlabeled_batch = 2\n"
                                         "unlabeled_batch = 2\nwarmup = 10\ncheckpoint_every = 10\n";
  }
  std::string logs[2];
  for (int r = 0; r < 2; ++r) {
    const fs::path wd = root / ("run" + std::to_string(r));
    fs::create_directories(wd);
    const std::string cmd = std::string(PCLF_CLI_PATH) + " --workdir " + wd.string() + " --config " +
                            (root / "run.toml").string() + " train > " + (wd / "stdout.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status != 0) return {false, "training run " + std::to_string(r) + " exited with status " + std::to_string(status)};
    logs[r] = slurp(wd / "det" / "train_log.jsonl");
  }
  const auto lines = std::count(logs[0].begin(), logs[0].end(), '\n');
  const bool ok = !logs[0].empty() && logs[0] == logs[1];
  return {ok, std::string(ok ? "byte-identical" : "DIFFERENT") + " training logs from two processes (" +
                  std::to_string(lines) + " lines, " + std::to_string(logs[0].size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  s.workdir = fs::temp_directory_path() / "pclf_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) s.workdir = argv[++i];
    else if (a == "--toy-steps" && i + 1 < argc) s.toy_steps = std::stoll(argv[++i]);
    else if (a == "--directional-steps" && i + 1 < argc) s.directional_steps = std::stoll(argv[++i]);
    else s.only.push_back(a);
  }
  fs::create_directories(s.workdir);

  const std::vector<std::pair<std::string, std::function<Outcome(const Settings&)>>> criteria = {
      {"loss_fidelity", loss_fidelity},
      {"gradient_integrity", gradient_integrity},
      {"ablation_identity", ablation_identity},
      {"ramp_schedule", ramp_schedule},
      {"constraint_projection", constraint_projection},
      {"noise_view_correctness", noise_views},
      {"metrics_oracles", metrics_oracles},
      {"toy_learning", toy_learning},
      {"directional_pcl", directional_pcl},
      {"directional_semi_supervised", directional_semi},
      {"determinism", determinism},
  };

  nlohmann::json record = nlohmann::json::array();
  int passed = 0, run = 0;
  for (const auto& [name, fn] : criteria) {
    if (!s.only.empty() &&
        std::none_of(s.only.begin(), s.only.end(), [&](const std::string& o) { return name.find(o) != std::string::npos; }))
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(s);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    ++run;
    passed += o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt("%.1f", secs) << " s]"
              << std::endl;
    record.push_back({{"criterion", name}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", secs}});
  }
  std::cout << "acceptance: " << passed << "/" << run << " criteria passed" << std::endl;
  std::ofstream(s.workdir / "acceptance.json") << record.dump(2) << "\n";
  return 0;
}

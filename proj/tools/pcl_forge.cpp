// pcl-forge: dataset generation, training, evaluation and plotting.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "pcl_forge/pcl_forge.hpp"

namespace fs = std::filesystem;
using namespace pclf;

namespace {

struct Globals {
  fs::path workdir = ".";
  fs::path config;
  std::vector<std::string> overrides;
};

// Defaults, then the config file, then --set overrides.
train::Config load_config(const Globals& g) {
  train::Config cfg;
  if (!g.config.empty()) cfg.merge_file(train::resolve(g.workdir, g.config));
  for (const auto& o : g.overrides) cfg.set_assignment(o);
  return cfg;
}

void print_report(const train::MetricsReport& r) {
  std::cout << train::to_json(r).dump(2) << "\n";
}

std::vector<synth::Sample> load_eval_samples(const fs::path& manifest_path, const std::string& split) {
  const auto m = synth::load_manifest(manifest_path);
  auto samples = train::load_split(m, split);
  PCLF_REQUIRE(!samples.empty(), InvalidArgument, "no records with split '" + split + "' in " + manifest_path.string());
  return samples;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcl-forge: two-stream tamper detector with proposal contrastive learning"};
  app.footer(train::describe_schema());
  app.require_subcommand(0, 1);

  Globals g;
  bool dump_srm_flag = false;
  app.add_option("--workdir", g.workdir, "root for all relative paths")->default_val(".");
  app.add_option("--config", g.config, "flat key = value config file");
  app.add_option("--set", g.overrides, "override a config key (key=value), repeatable");
  app.add_flag("--dump-srm", dump_srm_flag, "print the SRM kernel constants and exit");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset (data.* keys)");
  fs::path gen_out;
  gen->add_option("--out", gen_out, "dataset directory (default: directory of data.manifest)");

  auto* trn = app.add_subcommand("train", "train one configuration, then evaluate it");
  fs::path resume, train_out;
  trn->add_option("--resume", resume, "checkpoint to continue from");
  trn->add_option("--out", train_out, "run directory (default: <workdir>/<experiment.name>)");

  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint and write a metrics report");
  fs::path ckpt, manifest, eval_out;
  std::string split;
  evl->add_option("--ckpt", ckpt, "checkpoint")->required();
  evl->add_option("--manifest", manifest, "dataset manifest")->required();
  evl->add_option("--out", eval_out, "report JSON path")->default_val("report.json");
  evl->add_option("--split", split, "manifest split")->default_val("test");

  auto* ana = app.add_subcommand("analyze-scores", "proposal IoU vs RPN/RCNN score scatter and PCCs");
  fs::path ana_out;
  ana->add_option("--ckpt", ckpt, "checkpoint")->required();
  ana->add_option("--manifest", manifest, "dataset manifest")->required();
  ana->add_option("--out", ana_out, "scatter CSV path")->default_val("scores.csv");
  ana->add_option("--split", split, "manifest split")->default_val("test");

  auto* swp = app.add_subcommand("sweep", "run an experiment config, fanning out over experiment.sweep_* and seeds");

  auto* plt = app.add_subcommand("plot", "emit PNG plots for every log, summary and score file under a directory");
  fs::path plot_dir;
  plt->add_option("--dir", plot_dir, "artifact directory (default: workdir)");

  auto* srm = app.add_subcommand("dump-srm", "print the SRM kernel constants");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump_srm_flag || srm->parsed()) {
      noise::dump_srm(std::cout);
      return 0;
    }
    const train::Config cfg = load_config(g);
    if (gen->parsed()) {
      const fs::path out = gen_out.empty() ? train::resolve(g.workdir, cfg.text("data.manifest")).parent_path()
                                           : train::resolve(g.workdir, gen_out);
      const auto m = synth::build_dataset(cfg.dataset(), out);
      std::cout << "wrote " << m.records.size() << " records to " << (out / "manifest.json").string() << "\n";
    } else if (trn->parsed()) {
      const fs::path out = train_out.empty() ? g.workdir / train::sanitize(cfg.text("experiment.name"))
                                             : train::resolve(g.workdir, train_out);
      const auto res = train::train_and_evaluate(cfg, g.workdir, out, resume.empty() ? resume : train::resolve(g.workdir, resume));
      print_report(res.report);
    } else if (evl->parsed()) {
      train::Config ck_cfg;
      const auto model = train::load_model(train::resolve(g.workdir, ckpt), &ck_cfg);
      const auto samples = load_eval_samples(train::resolve(g.workdir, manifest), split);
      const auto rep = train::evaluate(*model, samples,
                                       {ck_cfg.real("eval.image_threshold"), ck_cfg.real("eval.pixel_threshold")});
      train::write_json(train::resolve(g.workdir, eval_out), train::to_json(rep));
      print_report(rep);
    } else if (ana->parsed()) {
      const auto model = train::load_model(train::resolve(g.workdir, ckpt));
      const auto samples = load_eval_samples(train::resolve(g.workdir, manifest), split);
      metrics::ScoreAnalysis a;
      train::evaluate(*model, samples, {}, &a);
      const fs::path out = train::resolve(g.workdir, ana_out);
      train::write_scores_csv(out, a);
      fs::path pcc = out;
      pcc.replace_extension(".pcc.json");
      const nlohmann::json j = {{"pcc_rpn", train::number_or_null(a.pcc_rpn)},
                                {"pcc_rcnn", train::number_or_null(a.pcc_rcnn)},
                                {"points", a.points.size()}};
      train::write_json(pcc, j);
      std::cout << j.dump(2) << "\n";
    } else if (swp->parsed()) {
      const auto points = train::run_experiment(cfg, g.workdir);
      train::emit_plots(g.workdir / train::sanitize(cfg.text("experiment.name")), std::cerr);
      for (const auto& p : points)
        std::cout << cfg.text("experiment.sweep_key") << "=" << p.value << " seed=" << p.seed
                  << " ap50=" << p.result.report.ap50 << "\n";
    } else if (plt->parsed()) {
      const int n = train::emit_plots(plot_dir.empty() ? g.workdir : train::resolve(g.workdir, plot_dir), std::cerr);
      std::cout << "wrote " << n << " plot(s)\n";
    } else {
      std::cout << app.help();
    }
  } catch (const std::exception& e) {
    std::cerr << "pcl-forge: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
